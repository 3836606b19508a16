"""Consensus ADMM for the group-sparse peak-shaving problem.

The stacked controls are split into local copies ``u`` (one group per
household, constrained to its feasible polytope and carrying the sparsity
penalty) and a consensus copy ``v`` carrying the coupled quadratic
tracking term. Households update their group in parallel, the grid
operator solves the consensus step in closed form.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .problem import PeakShavingProblem
from .qpcore import BatchProjector, DenseQP, Polytope, project_polytope, solve_qp

log = logging.getLogger(__name__)

SOLVED, MAX_ITER = "solved", "max_iter"


@dataclass
class AdmmConfig:
    """Outer and inner solver settings.

    ``eta`` and ``mu`` drive the adaptive step size: ``rho`` is scaled by
    ``eta`` whenever one residual exceeds ``mu`` times the other.
    ``dual_update_order="paper"`` updates the multipliers inside the
    parallel step with the previous consensus iterate, ``"standard"``
    after the consensus step with the new one.
    """

    rho0: float = 1e-3
    eps: float = 1e-4
    eta: float = 2.0
    mu: float = 10.0
    max_iter: int = 5000
    inner_tol: float = 1e-9
    inner_max_iter: int = 500
    qp_tol: float = 1e-10
    qp_max_iter: int = 20000
    dual_update_order: str = "paper"
    workers: int = 1

    def __post_init__(self):
        if self.rho0 <= 0 or self.eps <= 0:
            raise ValueError("rho0 and eps must be positive")
        if self.eta <= 1 or self.mu <= 1:
            raise ValueError("eta and mu must exceed 1")
        if self.dual_update_order not in ("paper", "standard"):
            raise ValueError(f"unknown dual update order {self.dual_update_order!r}")


class Residuals(NamedTuple):
    r_pri: float
    r_dual: float


@dataclass
class CommsLedger:
    """Floats exchanged between households and the grid operator."""

    N: int
    I: int
    iterations: int = 0

    @property
    def floats_up_per_iter(self) -> int:
        # u_i and lambda_i from every household
        return 4 * self.N * self.I

    @property
    def floats_down_per_iter(self) -> int:
        # v_i and rho to every household
        return (2 * self.N + 1) * self.I

    @property
    def floats_up(self) -> int:
        return self.floats_up_per_iter * self.iterations

    @property
    def floats_down(self) -> int:
        return self.floats_down_per_iter * self.iterations


@dataclass
class AdmmState:
    u: np.ndarray
    v: np.ndarray
    lam: np.ndarray
    rho: float
    m: int = 0


@dataclass
class AdmmResult:
    u: np.ndarray
    v: np.ndarray
    lam: np.ndarray
    rho: float
    iterations: int
    status: str
    history: list[Residuals]
    ledger: CommsLedger
    trace: list[tuple] = field(default_factory=list, repr=False)
    local_failures: int = 0
    inner_iterations: int = 0

    @property
    def converged(self) -> bool:
        return self.status == SOLVED

    def write_trace(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["iteration", "r_pri", "r_dual", "rho", "objective"])
            for row in self.trace:
                wr.writerow([row[0]] + [repr(float(x)) for x in row[1:]])


def soft_threshold(a, x) -> np.ndarray:
    """Group shrinkage ``max(1 - a/||x||, 0) * x``.

    ``x`` may be a single group or a stack of groups (rows) with one
    threshold each.
    """
    x = np.asarray(x, dtype=float)
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    a = np.asarray(a, dtype=float)
    if x.ndim > 1:
        a = np.reshape(a, (-1, 1)) if a.ndim else a
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(norm > a, 1.0 - a / np.where(norm > 0, norm, 1.0), 0.0)
    return factor * x


def _sign_pattern(n):
    s = np.ones(n)
    s[1::2] = -1.0
    return s


def local_update_p1(target, sigma_t: float, rho: float, polytope: Polytope,
                    method: str = "signed", tol: float = 1e-10) -> np.ndarray:
    """``argmin sigma_t ||u||_1 + rho/2 ||u - target||^2`` over the polytope.

    ``target`` is ``v + lambda / rho``. With ``method="epigraph"`` the
    problem is lifted to ``(u, s)`` with ``-s <= u <= s`` and solved as a
    QP in ``4N`` variables. On the battery polytopes the sign of every
    component is fixed (charging ``>= 0``, discharging ``<= 0``), so the
    default ``"signed"`` method solves the equivalent projection of the
    shifted target in ``2N`` variables.
    """
    target = np.asarray(target, dtype=float)
    if rho <= 0:
        raise ValueError("rho must be positive")
    n = target.size
    if method == "signed":
        shifted = target - (sigma_t / rho) * _sign_pattern(n)
        return project_polytope(shifted, polytope, tol)
    if method != "epigraph":
        raise ValueError(f"unknown method {method!r}")
    # move curvature delta from u to s: the extra term delta/2 (||s||^2 - ||u||^2)
    # is >= 0 whenever s >= |u| and vanishes at s = |u|, so the minimizer is
    # unchanged while the Hessian stays definite and well conditioned
    delta = 0.5 * rho
    I_n = np.eye(n)
    G = np.block([
        [polytope.G, np.zeros((polytope.G.shape[0], n))],
        [I_n, -I_n],
        [-I_n, -I_n],
    ])
    h = np.concatenate([polytope.h, np.zeros(2 * n)])
    H = np.diag(np.concatenate([np.full(n, rho - delta), np.full(n, delta)]))
    g = np.concatenate([-rho * target, np.full(n, sigma_t)])
    sol = solve_qp(DenseQP(H, g, Polytope(G, h)), tol=tol)
    return sol.y[:n]


@dataclass
class LocalResult:
    u: np.ndarray
    xi: np.ndarray
    iterations: int
    converged: bool


def local_update_p2(u_prev, v_i, lam_i, sigma_t: float, rho: float, polytope: Polytope,
                    inner_tol: float = 1e-9, inner_max_iter: int = 500,
                    xi0=None) -> LocalResult:
    """``argmin sigma_t ||u||_2 + rho/2 ||u - v - lambda/rho||^2`` over the polytope.

    Runs an inner ADMM on the split ``u = s`` (``s`` takes the norm and the
    quadratic, ``u`` the polytope) with penalty ``rho``: a group
    soft-threshold, a projection and a multiplier step per iteration. Stops
    once ``rho ||u - s||`` and ``rho ||s - s_prev||`` are both below
    ``inner_tol``.
    """
    P = BatchProjector([polytope])
    res = _inner_p2(P, np.atleast_2d(u_prev), np.atleast_2d(v_i), np.atleast_2d(lam_i),
                    np.atleast_1d(float(sigma_t)), rho, inner_tol, inner_max_iter,
                    None if xi0 is None else np.atleast_2d(xi0))
    u, xi, iters, conv = res
    return LocalResult(u[0], xi[0], int(iters[0]), bool(conv[0]))


def _inner_p2(P: BatchProjector, u, v, lam, sigma_t, rho, tol, max_iter, xi=None):
    """Batched inner ADMM; every row runs until its own stop test holds."""
    I = u.shape[0]
    u = np.array(u, dtype=float)
    xi = np.zeros_like(u) if xi is None else np.array(xi, dtype=float)
    t = v + lam / rho
    a = sigma_t / rho
    s = np.zeros_like(u)
    iters = np.zeros(I, dtype=np.int64)
    active = np.arange(I)
    for _ in range(max_iter):
        if active.size == 0:
            break
        s_old = s[active]
        s_new = 0.5 * soft_threshold(a[active], t[active] + u[active] - xi[active] / rho)
        s[active] = s_new
        arg = np.zeros_like(u)
        arg[active] = s_new + xi[active] / rho
        u[active] = P(arg, active)[active]
        xi[active] += rho * (s_new - u[active])
        iters[active] += 1
        r_pri = rho * np.linalg.norm(u[active] - s_new, axis=1)
        r_dual = rho * np.linalg.norm(s_new - s_old, axis=1)
        done = (r_pri <= tol) & (r_dual <= tol)
        active = active[~done]
    converged = np.ones(I, dtype=bool)
    converged[active] = False
    return u, xi, iters, converged


def dual_update(lam, rho: float, v_old, u_new) -> np.ndarray:
    return lam + rho * (np.asarray(v_old) - np.asarray(u_new))


def consensus_update(problem: PeakShavingProblem, u_new, lam_new, rho: float,
                     coupling=None) -> np.ndarray:
    """Closed-form minimizer of ``(1/N)||A v - b||^2 + rho/2 ||v - u + lambda/rho||^2``.

    Uses ``A A^T = c I`` so that
    ``(rho I + (2/N) A^T A)^{-1} = (I - (2/N) A^T A / (rho + 2c/N)) / rho``.
    """
    A = problem.coupling if coupling is None else coupling
    beta = 2.0 / problem.N
    r = beta * A.adjoint(problem.b) - lam_new + rho * u_new
    return (r - beta * A.adjoint(A.apply(r)) / (rho + beta * A.c)) / rho


def residuals(u_new, v_new, v_old, rho: float) -> Residuals:
    return Residuals(float(rho * np.linalg.norm(u_new - v_new)),
                     float(rho * np.linalg.norm(v_new - v_old)))


def adapt_rho(rho: float, res: Residuals, eta: float, mu: float) -> float:
    if res.r_pri >= mu * res.r_dual:
        return rho * eta
    if res.r_dual >= mu * res.r_pri:
        return rho / eta
    return rho


class LocalSolvers:
    """Parallel-step machinery for all households of one problem instance."""

    def __init__(self, polytopes: list[Polytope], config: AdmmConfig):
        self.P = BatchProjector(polytopes, tol=config.qp_tol,
                                max_iter=config.qp_max_iter, workers=config.workers)
        self.config = config
        self.xi = None
        self.failures = 0
        self.inner_iterations = 0

    def __call__(self, problem: PeakShavingProblem, u, v, lam, rho) -> np.ndarray:
        st = problem.sigma_tilde
        if problem.p == 1 or not np.any(st > 0):
            shift = (st / rho)[:, None] * _sign_pattern(u.shape[1]) if problem.p == 1 else 0.0
            return self.P(v + lam / rho - shift)
        cfg = self.config
        if self.xi is None:
            self.xi = np.zeros_like(u)
        u_new, self.xi, iters, conv = _inner_p2(
            self.P, u, v, lam, st, rho, cfg.inner_tol, cfg.inner_max_iter, self.xi)
        self.inner_iterations += int(iters.sum())
        bad = int((~conv).sum())
        if bad:
            self.failures += bad
            log.debug("%d inner solves did not converge", bad)
        return u_new


def solve(problem: PeakShavingProblem, polytopes: list[Polytope],
          config: AdmmConfig | None = None, init=None, trace: bool = False,
          callback=None) -> AdmmResult:
    """Run the consensus ADMM from ``init = (u0, v0, lambda0)``.

    Iterates are ``(I, 2N)`` arrays. Stops when ``rho ||u - v||`` and
    ``rho ||v - v_prev||`` both drop below ``config.eps``. ``callback(m, u,
    v, lam, rho)`` is called after every iteration.
    """
    config = config or AdmmConfig()
    I, n = problem.I, 2 * problem.N
    if len(polytopes) != I:
        raise ValueError(f"{len(polytopes)} polytopes for {I} subsystems")
    if init is None:
        u = np.zeros((I, n))
        v = np.zeros((I, n))
        lam = np.zeros((I, n))
    else:
        u, v, lam = (np.array(a, dtype=float).reshape(I, n) for a in init)
    local = LocalSolvers(polytopes, config)
    ledger = CommsLedger(problem.N, I)
    rho = config.rho0
    history, rows = [], []
    status = MAX_ITER
    paper_order = config.dual_update_order == "paper"
    for m in range(config.max_iter):
        u = local(problem, u, v, lam, rho)
        if paper_order:
            lam = dual_update(lam, rho, v, u)
            v_new = consensus_update(problem, u, lam, rho)
        else:
            v_new = consensus_update(problem, u, lam, rho)
            lam = dual_update(lam, rho, v_new, u)
        res = residuals(u, v_new, v, rho)
        v = v_new
        ledger.iterations += 1
        if callback is not None:
            callback(m, u, v, lam, rho)
        history.append(res)
        if trace:
            rows.append((m, res.r_pri, res.r_dual, rho, problem.objective(u)))
        if res.r_pri <= config.eps and res.r_dual <= config.eps:
            status = SOLVED
            break
        rho = adapt_rho(rho, res, config.eta, config.mu)
    if status != SOLVED:
        log.warning("ADMM stopped after %d iterations (r_pri=%.3g, r_dual=%.3g)",
                    ledger.iterations, history[-1].r_pri, history[-1].r_dual)
    return AdmmResult(u, v, lam, rho, ledger.iterations, status, history, ledger, rows,
                      local.failures + local.P.failures, local.inner_iterations)
