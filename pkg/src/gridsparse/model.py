"""Residential energy systems: battery dynamics, constraints and scenarios.

Each household ``i`` owns a battery whose state of charge evolves as

    x(n+1) = alpha * x(n) + T * (beta * u_plus(n) + u_minus(n))

and draws ``z(n) = w(n) + u_plus(n) + gamma * u_minus(n)`` from the grid,
where ``w`` is the net consumption (load minus generation).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

FEAS_TOL = 1e-8


class ControlInput(NamedTuple):
    """Charging (``>= 0``) and discharging (``<= 0``) rate in kW."""

    charge: float
    discharge: float


@dataclass(frozen=True)
class SubsystemParams:
    """Battery parameters of one household.

    Attributes
    ----------
    alpha : float
        Self-discharge efficiency in (0, 1].
    beta, gamma : float
        Charging and discharging conversion efficiencies in (0, 1].
    C : float
        Capacity in kWh.
    u_max : float
        Maximal charging rate in kW (``>= 0``).
    u_min : float
        Maximal discharging rate in kW (``<= 0``).
    """

    alpha: float
    beta: float
    gamma: float
    C: float
    u_max: float
    u_min: float

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            val = getattr(self, name)
            if not 0.0 < val <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {val}")
        if self.C < 0:
            raise ValueError(f"capacity must be nonnegative, got {self.C}")
        if self.u_max < 0:
            raise ValueError(f"u_max must be nonnegative, got {self.u_max}")
        if self.u_min > 0:
            raise ValueError(f"u_min must be nonpositive, got {self.u_min}")


@dataclass(frozen=True)
class SubsystemState:
    soc: float
    n: int = 0


@dataclass(frozen=True)
class ParameterStats:
    """Expected value and standard deviation of every battery parameter."""

    C: tuple[float, float] = (2.0563, 0.2431)
    u_max: tuple[float, float] = (0.5229, 0.1563)
    u_min: tuple[float, float] = (-0.5105, 0.1474)
    alpha: tuple[float, float] = (0.9913, 0.0053)
    beta: tuple[float, float] = (0.9494, 0.0098)
    gamma: tuple[float, float] = (0.9487, 0.0100)

    def __post_init__(self):
        for name, (_, std) in self.items():
            if std < 0:
                raise ValueError(f"standard deviation of {name} is negative")

    def items(self):
        return [(k, getattr(self, k)) for k in PARAM_ORDER]

    def mean_params(self) -> SubsystemParams:
        return SubsystemParams(**{k: v[0] for k, v in self.items()})

    def zero_spread(self) -> "ParameterStats":
        return ParameterStats(**{k: (v[0], 0.0) for k, v in self.items()})


PARAM_ORDER = ("C", "u_max", "u_min", "alpha", "beta", "gamma")
PARAM_STATS = ParameterStats()

# admissible ranges used to clamp normal draws
_CLAMP = {
    "alpha": (0.01, 1.0),
    "beta": (0.01, 1.0),
    "gamma": (0.01, 1.0),
    "C": (0.01, math.inf),
    "u_max": (0.01, math.inf),
    "u_min": (-math.inf, -0.01),
}


@dataclass
class GridScenario:
    """Households, their net consumption profiles and the sampling interval.

    ``profiles`` has shape ``(I, L)``; column ``n`` holds ``w_i(n)`` in kW.
    """

    subsystems: list[SubsystemParams]
    profiles: np.ndarray
    T: float = 0.5
    initial_soc: np.ndarray = None
    seed: int | None = None
    N_default: int = 24
    profile_source: str | None = field(default=None, compare=False)

    def __post_init__(self):
        self.profiles = np.atleast_2d(np.asarray(self.profiles, dtype=float))
        I = len(self.subsystems)
        if I < 1:
            raise ValueError("a scenario needs at least one subsystem")
        if self.profiles.shape[0] != I:
            raise ValueError(
                f"{self.profiles.shape[0]} profiles for {I} subsystems")
        if self.T <= 0:
            raise ValueError("sampling interval T must be positive")
        if self.initial_soc is None:
            self.initial_soc = np.zeros(I)
        self.initial_soc = np.asarray(self.initial_soc, dtype=float)
        if self.initial_soc.shape != (I,):
            raise ValueError("initial_soc must hold one value per subsystem")
        caps = self.capacity
        bad = (self.initial_soc < 0) | (self.initial_soc > caps)
        if bad.any():
            raise ValueError(
                f"initial SoC outside [0, C] for subsystems {np.flatnonzero(bad).tolist()}")

    @property
    def I(self) -> int:
        return len(self.subsystems)

    @property
    def length(self) -> int:
        return self.profiles.shape[1]

    def _vec(self, name):
        return np.array([getattr(p, name) for p in self.subsystems])

    @property
    def alpha(self):
        return self._vec("alpha")

    @property
    def beta(self):
        return self._vec("beta")

    @property
    def gamma(self):
        return self._vec("gamma")

    @property
    def capacity(self):
        return self._vec("C")

    @property
    def u_max(self):
        return self._vec("u_max")

    @property
    def u_min(self):
        return self._vec("u_min")

    def w_bar(self) -> np.ndarray:
        return self.profiles.mean(axis=0)

    def to_dict(self, profiles_path: str | None = None) -> dict:
        subs = []
        for p, x0 in zip(self.subsystems, self.initial_soc):
            d = asdict(p)
            d["x0"] = float(x0)
            subs.append(d)
        return {
            "T": self.T,
            "N_default": self.N_default,
            "subsystems": subs,
            "profiles": profiles_path if profiles_path else self.profiles.tolist(),
            "seed": self.seed,
        }

    def save(self, path, profiles_csv=None):
        """Write the scenario JSON; profiles go to ``profiles_csv`` if given."""
        path = Path(path)
        ref = None
        if profiles_csv is not None:
            profiles_csv = Path(profiles_csv)
            save_profiles(profiles_csv, self.profiles)
            try:
                ref = str(profiles_csv.relative_to(path.parent))
            except ValueError:
                ref = str(profiles_csv)
        path.write_text(json.dumps(self.to_dict(ref), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "GridScenario":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"scenario file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as err:
            raise ValueError(f"{path}: invalid JSON ({err})") from err
        return cls.from_dict(data, base_dir=path.parent)

    @classmethod
    def from_dict(cls, data: dict, base_dir=".") -> "GridScenario":
        subs, x0 = [], []
        for d in data["subsystems"]:
            d = dict(d)
            x0.append(d.pop("x0", 0.0))
            subs.append(SubsystemParams(**d))
        prof = data["profiles"]
        source = None
        if isinstance(prof, str):
            source = str(Path(base_dir) / prof)
            prof = np.array(load_profiles(source))
        return cls(subs, np.asarray(prof, dtype=float), T=float(data["T"]),
                   initial_soc=np.asarray(x0, dtype=float), seed=data.get("seed"),
                   N_default=int(data.get("N_default", 24)), profile_source=source)


def step_dynamics(x: float, u, p: SubsystemParams, T: float) -> float:
    """Next state of charge; bounds are not enforced."""
    up, um = u
    return p.alpha * x + T * (p.beta * up + um)


def power_demand(u, w: float, gamma: float) -> float:
    up, um = u
    return w + up + gamma * um


def simulate_trajectory(x0: float, controls, p: SubsystemParams, T: float) -> np.ndarray:
    """States ``x(k), ..., x(k+N)`` for controls of shape ``(N, 2)``."""
    controls = np.asarray(controls, dtype=float).reshape(-1, 2)
    x = np.empty(len(controls) + 1)
    x[0] = x0
    for j, u in enumerate(controls):
        x[j + 1] = p.alpha * x[j] + T * (p.beta * u[0] + u[1])
    return x


def _ratio(val, bound):
    if bound == 0.0:
        return 0.0
    return val / bound


@dataclass
class FeasibilityReport:
    ok: bool
    violations: list[str]

    def __bool__(self):
        return self.ok


def check_feasible(controls, x0: float, p: SubsystemParams, T: float,
                   tol: float = FEAS_TOL, constrain_terminal: bool = True) -> FeasibilityReport:
    """Check the rate, exclusivity and state-of-charge constraints.

    The terminal state ``x(k+N)`` is checked unless ``constrain_terminal``
    is false.
    """
    controls = np.asarray(controls, dtype=float).reshape(-1, 2)
    bad = []
    for n, (up, um) in enumerate(controls):
        if up < -tol or up > p.u_max + tol:
            bad.append(f"step {n}: charge {up:.6g} outside [0, {p.u_max:.6g}]")
        if um > tol or um < p.u_min - tol:
            bad.append(f"step {n}: discharge {um:.6g} outside [{p.u_min:.6g}, 0]")
        if p.u_max == 0.0 and abs(up) > tol:
            bad.append(f"step {n}: charge {up:.6g} with zero charge bound")
        if p.u_min == 0.0 and abs(um) > tol:
            bad.append(f"step {n}: discharge {um:.6g} with zero discharge bound")
        s = _ratio(um, p.u_min) + _ratio(up, p.u_max)
        if s < -tol or s > 1.0 + tol:
            bad.append(f"step {n}: rate ratio sum {s:.6g} outside [0, 1]")
    x = simulate_trajectory(x0, controls, p, T)
    last = len(x) if constrain_terminal else len(x) - 1
    for j in range(last):
        if x[j] < -tol or x[j] > p.C + tol:
            bad.append(f"state {j}: SoC {x[j]:.6g} outside [0, {p.C:.6g}]")
    return FeasibilityReport(not bad, bad)


def sample_params(I: int, stats: ParameterStats, rng: np.random.Generator) -> list[SubsystemParams]:
    draws = {}
    for name, (mean, std) in stats.items():
        lo, hi = _CLAMP[name]
        draws[name] = np.clip(rng.normal(mean, std, size=I), lo, hi)
    return [SubsystemParams(**{k: float(draws[k][i]) for k in PARAM_ORDER})
            for i in range(I)]


def synth_profiles(I: int, length: int, T: float = 0.5, seed: int = 0, *,
                   base: float = 0.5, load_amp: float = 0.12, pv_amp: float = 0.3,
                   noise: float = 0.06, phase_jitter: float = 0.75,
                   amp_jitter: float = 0.25, start_hour: float = 0.0) -> np.ndarray:
    """Synthetic net consumption in kW, shape ``(I, length)``.

    Every household gets a twice-daily load oscillation peaking in the
    morning and evening, minus a midday photovoltaic bump, plus white noise.
    Both periodic parts have zero mean over a day and the noise is demeaned
    per complete day, so the mean of every day-aligned 24 h window equals
    ``base`` whenever ``24 / T`` is an integer.
    """
    if length < 1:
        raise ValueError("profile length must be at least 1")
    rng = np.random.default_rng(seed)
    t = start_hour + T * np.arange(length)
    day = 24.0
    shift = phase_jitter * rng.standard_normal((I, 1))
    scale_l = 1.0 + amp_jitter * rng.standard_normal((I, 1)).clip(-3, 3)
    scale_s = 1.0 + amp_jitter * rng.standard_normal((I, 1)).clip(-3, 3)

    # peaks at 07:30 and 19:30
    load = load_amp * np.cos(4 * np.pi * (t - 7.5 - shift) / day)
    sun = np.maximum(np.cos(2 * np.pi * (t - 13.0 - shift) / day), 0.0)
    # exact mean of the clipped cosine on this sampling grid
    spd = day / T
    if abs(spd - round(spd)) < 1e-9:
        grid = start_hour + T * np.arange(int(round(spd)))
        sun_mean = np.maximum(
            np.cos(2 * np.pi * (grid - 13.0 - shift) / day), 0.0).mean(axis=1, keepdims=True)
    else:
        sun_mean = 1.0 / np.pi
    pv = pv_amp * (sun - sun_mean)

    eps = noise * rng.standard_normal((I, length))
    if abs(spd - round(spd)) < 1e-9:
        spd = int(round(spd))
        full = (length // spd) * spd
        if full:
            blocks = eps[:, :full].reshape(I, -1, spd)
            eps[:, :full] = (blocks - blocks.mean(axis=2, keepdims=True)).reshape(I, full)
    return base + scale_l * load - scale_s * pv + eps


def generate_scenario(I: int, stats: ParameterStats = PARAM_STATS, seed: int = 0,
                      horizon_length: int = 96, T: float = 0.5, x0: float = 0.5,
                      N_default: int = 24, **profile_kw) -> GridScenario:
    """Random heterogeneous households plus synthetic profiles.

    Parameters are drawn from normal distributions with the moments in
    ``stats`` and clamped to their admissible ranges. The initial SoC is
    ``min(x0, C_i)``.
    """
    if I < 1:
        raise ValueError(f"number of subsystems must be >= 1, got {I}")
    rng = np.random.default_rng(seed)
    subs = sample_params(I, stats, rng)
    prof_seed = int(rng.integers(2**31))
    w = synth_profiles(I, horizon_length, T, prof_seed, **profile_kw)
    soc = np.minimum(x0, [p.C for p in subs])
    return GridScenario(subs, w, T=T, initial_soc=soc, seed=seed, N_default=N_default)


def save_profiles(path, profiles, header: Sequence[str] | None = None):
    profiles = np.atleast_2d(np.asarray(profiles, dtype=float))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        if header is not None:
            wr.writerow(header)
        for row in profiles:
            wr.writerow([repr(float(v)) for v in row])


def load_profiles(path, header: bool | None = None) -> list[np.ndarray]:
    """Read one net consumption profile per CSV row.

    ``header=None`` skips the first row only if it is not numeric.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"profile file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh)]
    if header is None:
        header = bool(rows) and not _numeric_row(rows[0])
    if header:
        rows = rows[1:]
    rows = [r for r in rows if any(c.strip() for c in r)]
    if not rows:
        raise ValueError(f"{path}: no profile rows")
    width = len(rows[0])
    out = []
    offset = 2 if header else 1
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ValueError(
                f"{path}: row {i + offset} has {len(row)} columns, expected {width}")
        vals = np.empty(width)
        for j, cell in enumerate(row):
            try:
                vals[j] = float(cell)
            except ValueError:
                raise ValueError(
                    f"{path}: row {i + offset}, column {j + 1}: not a number: {cell!r}") from None
        out.append(vals)
    return out


def _numeric_row(row) -> bool:
    try:
        [float(c) for c in row]
    except ValueError:
        return False
    return True
