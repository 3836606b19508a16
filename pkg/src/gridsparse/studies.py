"""Open-loop studies: sparsity versus fleet size and deviation versus kappa."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import admm
from .model import GridScenario, generate_scenario
from .mpc import half_normal_weights, relative_deviation, sparsity_percentage
from .problem import PeakShavingProblem
from .qpcore import Polytope, build_polytope_U

log = logging.getLogger(__name__)

KAPPA_GRID = np.logspace(-5, -2, 13)


@dataclass
class OpenLoopResult:
    problem: PeakShavingProblem
    result: admm.AdmmResult
    polytopes: list[Polytope]
    z_bar: np.ndarray
    sparsity: float

    @property
    def u(self) -> np.ndarray:
        return self.result.u

    @property
    def pattern(self) -> np.ndarray:
        """Activity matrix ``(I, N)``: 1 where a household's control is nonzero."""
        return (np.linalg.norm(self.u.reshape(self.problem.I, -1, 2), axis=2) > 0).astype(int)


def open_loop(scenario: GridScenario, *, kappa: float, sigma, p: int = 2, N: int | None = None,
              k: int | None = None, admm_config: admm.AdmmConfig | None = None,
              constrain_terminal: bool = True, count_tol: float = 1e-4,
              trace: bool = False, callback=None) -> OpenLoopResult:
    """Solve the fleet problem once from the scenario's initial SoC.

    ``k`` defaults to ``N - 1``, the first instant with a full history for
    the reference trajectory. ``callback(polytopes, m, u, v, lam, rho)``
    sees every ADMM iterate.
    """
    N = scenario.N_default if N is None else N
    k = N - 1 if k is None else k
    if k + N > scenario.length:
        raise ValueError(f"window [{k}, {k + N}) exceeds profile length {scenario.length}")
    problem = PeakShavingProblem.from_window(scenario.gamma, scenario.w_bar(), k, N, kappa, sigma, p)
    polys = [build_polytope_U(par, x, N, scenario.T, constrain_terminal)
             for par, x in zip(scenario.subsystems, scenario.initial_soc)]
    res = admm.solve(problem, polys, admm_config, trace=trace,
                     callback=None if callback is None else lambda *it: callback(polys, *it))
    z = problem.w_bar + problem.coupling.apply(res.u)
    return OpenLoopResult(problem, res, polys, z, sparsity_percentage(res.u, count_tol))


def table2(sizes=(25, 50, 100), ps=(2, 1), *, kappa: float = 1e-3, replications: int = 20,
           seed: int = 0, weight_seed: int = 1, N: int = 24,
           admm_config: admm.AdmmConfig | None = None, progress=None, callback=None,
           keep_solutions: bool = False, **scenario_kw) -> list[dict]:
    """Open-loop nonzero percentage per (I, p, replication).

    One scenario is generated per fleet size; replications redraw the
    weights. Both norms see the same scenario and weights in a replication.
    """
    rows = []
    for I in sizes:
        sc = generate_scenario(I, seed=seed, N_default=N, **scenario_kw)
        for r in range(replications):
            sigma = half_normal_weights(np.random.default_rng([weight_seed, I, r]), I)
            for p in ps:
                ol = open_loop(sc, kappa=kappa, sigma=sigma, p=p, N=N, admm_config=admm_config,
                               callback=callback)
                row = {"I": I, "p": p, "replication": r, "sparsity": ol.sparsity,
                       "iterations": ol.result.iterations, "status": ol.result.status,
                       "objective": ol.problem.objective(ol.u)}
                if keep_solutions:
                    row["u"] = ol.u
                rows.append(row)
                if progress is not None:
                    progress(row)
    return rows


def summarize_table2(rows) -> dict:
    """Mean nonzero percentage keyed by ``(I, p)``."""
    cells: dict = {}
    for r in rows:
        cells.setdefault((r["I"], r["p"]), []).append(r["sparsity"])
    return {key: float(np.mean(v)) for key, v in sorted(cells.items())}


def kappa_sweep(scenario: GridScenario, kappas=KAPPA_GRID, *, p: int = 2, sigma=None,
                N: int | None = None, k: int | None = None,
                admm_config: admm.AdmmConfig | None = None, callback=None) -> list[dict]:
    """Mean relative deviation of the predicted demand from the kappa = 0 solution."""
    if sigma is None:
        sigma = np.ones(scenario.I)
    base = open_loop(scenario, kappa=0.0, sigma=sigma, p=p, N=N, k=k, admm_config=admm_config,
                     callback=callback)
    rows = []
    for kappa in kappas:
        ol = open_loop(scenario, kappa=float(kappa), sigma=sigma, p=p, N=N, k=k,
                       admm_config=admm_config, callback=callback)
        dev = relative_deviation(ol.z_bar, base.z_bar)
        rows.append({"kappa": float(kappa), "p": p, "mean_deviation": float(dev.mean()),
                     "max_deviation": float(dev.max()), "sparsity": ol.sparsity,
                     "iterations": ol.result.iterations, "status": ol.result.status})
    return rows


def count_inversions(values) -> int:
    """Number of adjacent decreases in a sequence."""
    v = np.asarray(values, dtype=float)
    return int(np.count_nonzero(np.diff(v) < 0))
