"""Receding-horizon control of the battery fleet.

At every instant ``k`` the grid operator builds the reference from the
mean net consumption, the fleet solves the group-sparse problem with the
distributed ADMM, each household applies its first control (or nothing if
it is negligible) and the solver state is shifted by one step to
warm-start the next solve.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import admm
from .model import GridScenario
from .problem import PeakShavingProblem
from .qpcore import build_polytope_U

log = logging.getLogger(__name__)


@dataclass
class MpcConfig:
    """Closed-loop settings; ``start`` is the first time instant ``k``."""

    N: int = 24
    apply_eps: float = 1e-4
    weight_refresh_steps: int = 6
    weight_seed: int = 0
    weight_mode: str = "periodic_random"
    kappa: float = 1e-3
    p: int = 2
    sim_steps: int = 48
    start: int = 0
    constrain_terminal: bool = True
    sparsity_tol: float | None = None

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("prediction horizon N must be at least 2")
        if self.weight_refresh_steps < 1:
            raise ValueError("weight_refresh_steps must be at least 1")
        if self.weight_mode not in ("fixed", "periodic_random"):
            raise ValueError(f"unknown weight mode {self.weight_mode!r}")
        if self.p not in (1, 2):
            raise ValueError("p must be 1 or 2")
        if self.apply_eps < 0 or self.kappa < 0:
            raise ValueError("apply_eps and kappa must be nonnegative")

    @property
    def count_tol(self) -> float:
        return self.apply_eps if self.sparsity_tol is None else self.sparsity_tol


def half_normal_weights(rng: np.random.Generator, I: int) -> np.ndarray:
    """Nonnegative weights ``|g|`` with ``g`` standard normal."""
    return np.abs(rng.standard_normal(I))


class WeightPolicy:
    """Sparsity weights, optionally redrawn every ``period`` instants."""

    def __init__(self, I: int, mode: str = "periodic_random", period: int = 6,
                 seed: int = 0, sigma=None):
        self.I = I
        self.mode = mode
        self.period = period
        self.rng = np.random.default_rng(seed)
        self.sigma = None if sigma is None else np.asarray(sigma, dtype=float)
        if mode == "fixed" and self.sigma is None:
            self.sigma = np.ones(I)
        self.epoch = -1

    def refresh(self, k: int) -> np.ndarray:
        if self.mode == "periodic_random" and (self.sigma is None or k % self.period == 0):
            self.sigma = half_normal_weights(self.rng, self.I)
            self.epoch += 1
        elif self.epoch < 0:
            self.epoch = 0
        return self.sigma


def refresh_weights(policy: WeightPolicy, k: int) -> np.ndarray:
    return policy.refresh(k)


def apply_threshold(u_first, eps: float) -> np.ndarray:
    """Zero every household's first control whose Euclidean norm is below ``eps``."""
    if eps < 0:
        raise ValueError("apply threshold must be nonnegative")
    u_first = np.array(u_first, dtype=float).reshape(-1, 2)
    keep = np.linalg.norm(u_first, axis=1) >= eps
    u_first[~keep] = 0.0
    return u_first


def shift_warm_start(u_star, lam_star):
    """Drop the first step of every group and append a zero step.

    Returns ``(u0, v0, lam0)`` with ``v0 = u0``.
    """
    def shift(a):
        a = np.asarray(a, dtype=float)
        out = np.zeros_like(a)
        out[:, :-2] = a[:, 2:]
        return out

    u0 = shift(u_star)
    return u0, u0.copy(), shift(lam_star)


def sparsity_percentage(u, tol: float = 1e-4) -> float:
    """Percentage of components with magnitude above ``tol``."""
    if tol < 0:
        raise ValueError("counting tolerance must be nonnegative")
    u = np.asarray(u, dtype=float)
    return 100.0 * np.count_nonzero(np.abs(u) > tol) / u.size


def relative_deviation(z_kappa, z_zero) -> np.ndarray:
    """``|z_kappa - z_zero| / max|z_zero|`` per time slot."""
    z_zero = np.asarray(z_zero, dtype=float)
    denom = np.max(np.abs(z_zero))
    if denom == 0:
        raise ValueError("reference demand is identically zero")
    return np.abs(np.asarray(z_kappa, dtype=float) - z_zero) / denom


@dataclass
class MpcState:
    k: int
    soc: np.ndarray


@dataclass
class StepRecord:
    k: int
    applied: np.ndarray
    soc: np.ndarray
    soc_next: np.ndarray
    z_bar: float
    zeta_bar: float
    w_bar: float
    sparsity_open: float
    sparsity_applied: float
    active: int
    iterations: int
    rho_final: float
    status: str
    epoch: int


@dataclass
class ClosedLoopLog:
    records: list[StepRecord] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def applied(self) -> np.ndarray:
        """Applied controls, shape ``(steps, I, 2)``."""
        return np.array([r.applied for r in self.records])

    @property
    def soc(self) -> np.ndarray:
        """States of charge, shape ``(steps + 1, I)``."""
        return np.array([self.records[0].soc] + [r.soc_next for r in self.records])

    @property
    def z_bar(self) -> np.ndarray:
        return np.array([r.z_bar for r in self.records])

    def sparsity(self, tol: float = 1e-4) -> float:
        """Percentage of nonzero applied control components."""
        return sparsity_percentage(self.applied, tol)

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "controls.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["k", "i", "u_plus", "u_minus", "soc", "soc_next"])
            for r in self.records:
                for i, (up, um) in enumerate(r.applied):
                    wr.writerow([r.k, i, repr(float(up)), repr(float(um)),
                                 repr(float(r.soc[i])), repr(float(r.soc_next[i]))])
        with open(out / "summary.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["k", "z_bar", "zeta_bar", "w_bar", "sparsity_open", "sparsity_applied",
                         "active", "admm_iterations", "rho_final", "status", "epoch"])
            for r in self.records:
                wr.writerow([r.k, repr(r.z_bar), repr(r.zeta_bar), repr(r.w_bar),
                             repr(r.sparsity_open), repr(r.sparsity_applied), r.active,
                             r.iterations, repr(r.rho_final), r.status, r.epoch])


class ClosedLoop:
    """Stateful driver of the receding-horizon loop on one scenario."""

    def __init__(self, scenario: GridScenario, config: MpcConfig,
                 admm_config: admm.AdmmConfig | None = None, sigma=None, callback=None):
        self.scenario = scenario
        self.callback = callback
        self.config = config
        self.admm_config = admm_config or admm.AdmmConfig()
        self.policy = WeightPolicy(scenario.I, config.weight_mode, config.weight_refresh_steps,
                                   config.weight_seed, sigma)
        self.state = MpcState(config.start, scenario.initial_soc.copy())
        self.warm = None
        self.w_bar = scenario.w_bar()
        self.last_result = None

    def step(self) -> StepRecord:
        sc, cfg = self.scenario, self.config
        k, N = self.state.k, cfg.N
        if k + N > sc.length:
            raise ValueError(f"profiles end before instant {k + N - 1}")
        sigma = self.policy.refresh(k)
        problem = PeakShavingProblem.from_window(sc.gamma, self.w_bar, k, N, cfg.kappa, sigma, cfg.p)
        soc = self.state.soc
        polys = [build_polytope_U(par, x, N, sc.T, cfg.constrain_terminal)
                 for par, x in zip(sc.subsystems, soc)]
        cb = None
        if self.callback is not None:
            cb = lambda *it: self.callback(polys, *it)  # noqa: E731
        res = admm.solve(problem, polys, self.admm_config, self.warm, callback=cb)
        if not res.converged:
            log.warning("k=%d: ADMM hit the iteration limit", k)
        applied = apply_threshold(res.u[:, :2], cfg.apply_eps)
        soc_next = sc.alpha * soc + sc.T * (sc.beta * applied[:, 0] + applied[:, 1])
        z = self.w_bar[k] + np.mean(applied[:, 0] + sc.gamma * applied[:, 1])
        rec = StepRecord(
            k=k, applied=applied, soc=soc.copy(), soc_next=soc_next,
            z_bar=float(z), zeta_bar=float(problem.zeta_bar[0]), w_bar=float(self.w_bar[k]),
            sparsity_open=sparsity_percentage(res.u, cfg.count_tol),
            sparsity_applied=sparsity_percentage(applied, cfg.count_tol),
            active=int(np.count_nonzero(np.linalg.norm(applied, axis=1) > 0)),
            iterations=res.iterations, rho_final=float(res.rho), status=res.status,
            epoch=self.policy.epoch)
        self.warm = shift_warm_start(res.u, res.lam)
        self.state = MpcState(k + 1, soc_next)
        self.last_result = res
        return rec


def mpc_step(scenario: GridScenario, state: MpcState, config: MpcConfig, warm=None,
             admm_config=None, policy: WeightPolicy | None = None):
    """One closed-loop step from ``state``.

    Returns ``(applied, soc_next, record, warm_next)``.
    """
    loop = ClosedLoop(scenario, config, admm_config)
    loop.state = MpcState(state.k, np.asarray(state.soc, dtype=float).copy())
    loop.warm = warm
    if policy is not None:
        loop.policy = policy
    rec = loop.step()
    return rec.applied, rec.soc_next, rec, loop.warm


def run_closed_loop(scenario: GridScenario, config: MpcConfig,
                    admm_config: admm.AdmmConfig | None = None, sigma=None,
                    progress=None, callback=None) -> ClosedLoopLog:
    """Run ``config.sim_steps`` receding-horizon steps.

    ``progress(record)`` is called after every step and
    ``callback(polytopes, m, u, v, lam, rho)`` after every ADMM iteration.
    """
    if config.sim_steps < 1:
        raise ValueError("sim_steps must be at least 1")
    loop = ClosedLoop(scenario, config, admm_config, sigma, callback)
    out = ClosedLoopLog(config={"mpc": asdict(config), "admm": asdict(loop.admm_config),
                                "scenario_seed": scenario.seed})
    for _ in range(config.sim_steps):
        rec = loop.step()
        out.records.append(rec)
        if progress is not None:
            progress(rec)
    return out


def write_run_config(path, payload: dict):
    Path(path).write_text(json.dumps(payload, indent=1, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")
