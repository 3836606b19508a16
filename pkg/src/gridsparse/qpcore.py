"""Small dense strictly convex QPs over polytopes.

Every QP ``min 0.5 y^T H y + g^T y  s.t.  G y <= h`` is reduced to a
Euclidean projection (directly when ``H`` is a multiple of the identity,
through a Cholesky change of variables otherwise) and solved exactly by
the primal active-set kernel in :mod:`gridsparse._kernels`.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from ._kernels import FIXED, FREE, LOWER, UPPER, project_active_set, project_batch
from .model import SubsystemParams

log = logging.getLogger(__name__)

SOLVED, MAX_ITER, INFEASIBLE = "solved", "max_iter", "infeasible"


@dataclass
class Polytope:
    """``{y : G y <= h}``; ``layout`` documents the variable ordering."""

    G: np.ndarray
    h: np.ndarray
    layout: str = ""

    def __post_init__(self):
        self.G = np.atleast_2d(np.asarray(self.G, dtype=float))
        self.h = np.asarray(self.h, dtype=float).ravel()
        if self.G.shape[0] != self.h.size:
            raise ValueError("G and h disagree on the number of rows")

    @property
    def dim(self) -> int:
        return self.G.shape[1]

    def violation(self, y) -> float:
        """Largest constraint violation (0 when ``y`` is inside)."""
        if self.h.size == 0:
            return 0.0
        return float(max(np.max(self.G @ y - self.h), 0.0))

    def contains(self, y, tol: float = 1e-8) -> bool:
        return self.violation(y) <= tol


@dataclass
class DenseQP:
    H: np.ndarray
    g: np.ndarray
    constraints: Polytope

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.g = np.asarray(self.g, dtype=float).ravel()
        n = self.g.size
        if self.H.shape != (n, n) or self.constraints.dim != n:
            raise ValueError("inconsistent QP dimensions")

    def value(self, y) -> float:
        return float(0.5 * y @ self.H @ y + self.g @ y)


@dataclass
class QpSolution:
    y: np.ndarray
    kkt_residual: float
    iterations: int
    status: str
    multipliers: np.ndarray = None
    active: "ActiveSet" = field(default=None, repr=False)


@dataclass
class ActiveSet:
    """Warm-start state of the active-set kernel for one polytope."""

    y: np.ndarray
    vstat: np.ndarray
    work: np.ndarray
    nwork: int

    def copy(self) -> "ActiveSet":
        return ActiveSet(self.y.copy(), self.vstat.copy(), self.work.copy(), self.nwork)


class _Split:
    """Polytope rows sorted into simple bounds and normalized general rows."""

    def __init__(self, G, h):
        G = np.asarray(G, dtype=float)
        h = np.asarray(h, dtype=float)
        m, n = G.shape
        self.n = n
        self.lb = np.full(n, -np.inf)
        self.ub = np.full(n, np.inf)
        self.bound_row = np.full((n, 2), -1)  # original rows for lower, upper
        self.bound_coef = np.ones((n, 2))
        self.infeasible = False
        gen, scale = [], []
        for r in range(m):
            nz = np.flatnonzero(G[r])
            if nz.size == 0:
                if h[r] < 0:
                    self.infeasible = True
                continue
            if nz.size == 1:
                j = nz[0]
                bound = h[r] / G[r, j]
                if G[r, j] > 0:
                    if bound < self.ub[j]:
                        self.ub[j] = bound
                        self.bound_row[j, 1] = r
                        self.bound_coef[j, 1] = G[r, j]
                else:
                    if bound > self.lb[j]:
                        self.lb[j] = bound
                        self.bound_row[j, 0] = r
                        self.bound_coef[j, 0] = -G[r, j]
                continue
            gen.append(r)
            scale.append(np.linalg.norm(G[r]))
        if (self.lb > self.ub).any():
            self.infeasible = True
        self.gen_rows = np.array(gen, dtype=np.int64)
        self.scale = np.array(scale)
        if gen:
            self.G = G[gen] / self.scale[:, None]
            self.h = h[gen] / self.scale
        else:
            self.G = np.zeros((0, n))
            self.h = np.zeros(0)

    def feasible(self, y, tol) -> bool:
        if (y < self.lb - tol).any() or (y > self.ub + tol).any():
            return False
        return self.h.size == 0 or bool(np.all(self.G @ y - self.h <= tol))

    def start(self, y) -> ActiveSet:
        """Active set at a feasible point with only bounds in the working set."""
        y = np.clip(np.asarray(y, dtype=float).copy(), self.lb, self.ub)
        vstat = np.full(self.n, FREE, dtype=np.int64)
        vstat[y == self.lb] = LOWER
        vstat[y == self.ub] = UPPER
        vstat[self.lb == self.ub] = FIXED
        work = np.zeros(max(self.h.size, 1), dtype=np.int64)
        return ActiveSet(y, vstat, work, 0)

    def row_multipliers(self, lam, nu, m) -> np.ndarray:
        """Map kernel multipliers back onto the original rows."""
        out = np.zeros(m)
        if self.gen_rows.size:
            out[self.gen_rows] = lam / self.scale
        for j in range(self.n):
            if nu[j] > 0 and self.bound_row[j, 1] >= 0:
                out[self.bound_row[j, 1]] = nu[j] / self.bound_coef[j, 1]
            elif nu[j] < 0 and self.bound_row[j, 0] >= 0:
                out[self.bound_row[j, 0]] = -nu[j] / self.bound_coef[j, 0]
        return out


def kkt_residual(qp: DenseQP, y, lam) -> float:
    """Max of stationarity, primal, dual and complementarity violations."""
    G, h = qp.constraints.G, qp.constraints.h
    stat = qp.H @ y + qp.g + G.T @ lam
    slack = h - G @ y
    parts = [np.max(np.abs(stat)) if stat.size else 0.0]
    if h.size:
        parts += [max(-slack.min(), 0.0), max(-lam.min(), 0.0), np.max(np.abs(lam * slack))]
    return float(max(parts))


def _phase_one(G, h):
    n = G.shape[1]
    res = linprog(np.zeros(n), A_ub=G, b_ub=h, bounds=[(None, None)] * n, method="highs")
    if res.status != 0:
        return None
    return res.x


def solve_qp(qp: DenseQP, warm_start=None, tol: float = 1e-8,
             max_iter: int = 20000) -> QpSolution:
    """Solve a strictly convex QP with an exact active-set method.

    ``warm_start`` may be a point or an :class:`ActiveSet` from an earlier
    solve over the same polytope.
    """
    H, g = qp.H, qp.g
    G, h = qp.constraints.G, qp.constraints.h
    n = g.size
    diag = np.diag(H)
    scalar = np.allclose(H, np.diag(diag), rtol=0, atol=0) and np.all(diag == diag[0])
    if scalar:
        c = diag[0]
        if c <= 0:
            raise ValueError("Hessian must be positive definite")
        Gz, t = G, -g / c
        L = None
    else:
        try:
            L = np.linalg.cholesky(H)
        except np.linalg.LinAlgError:
            raise ValueError("Hessian must be positive definite") from None
        Linv = np.linalg.inv(L)
        Gz = G @ Linv.T
        t = -Linv @ g
    split = _Split(Gz, h)
    if split.infeasible:
        return QpSolution(np.full(n, np.nan), np.inf, 0, INFEASIBLE)

    def to_z(y):
        return y if L is None else L.T @ y

    state = None
    if isinstance(warm_start, ActiveSet):
        if split.feasible(warm_start.y, 1e-12):
            state = warm_start.copy()
    elif warm_start is not None:
        z = to_z(np.asarray(warm_start, dtype=float))
        if split.feasible(z, 1e-12):
            state = split.start(z)
    if state is None and split.feasible(np.zeros(n), 1e-12):
        state = split.start(np.zeros(n))
    if state is None:
        y0 = _phase_one(G, h)
        if y0 is None:
            return QpSolution(np.full(n, np.nan), np.inf, 0, INFEASIBLE)
        z0 = to_z(y0)
        # pull the LP vertex strictly inside tolerance before starting
        if not split.feasible(z0, 1e-12):
            z0 = np.clip(z0, split.lb, split.ub)
            if not split.feasible(z0, 1e-9):
                return QpSolution(np.full(n, np.nan), np.inf, 0, INFEASIBLE)
        state = split.start(z0)

    nwork, iters, st, lam, nu = project_active_set(
        t, split.lb, split.ub, split.G, split.h, state.y, state.vstat, state.work,
        state.nwork, tol, max_iter)
    state.nwork = nwork
    z = state.y
    y = z if L is None else np.linalg.solve(L.T, z)
    mult = split.row_multipliers(lam, nu, h.size)
    if scalar:
        mult = mult * c
    res = kkt_residual(qp, y, mult)
    status = SOLVED if st == 0 else MAX_ITER
    if status == SOLVED and res > tol:
        # residual is dominated by roundoff for badly scaled H
        log.debug("KKT residual %.3g above tolerance %.3g", res, tol)
    return QpSolution(y.copy(), res, int(iters), status, mult, state)


def project_polytope(point, polytope: Polytope, tol: float = 1e-8,
                     warm_start=None, max_iter: int = 20000) -> np.ndarray:
    point = np.asarray(point, dtype=float)
    qp = DenseQP(np.eye(point.size), -point, polytope)
    sol = solve_qp(qp, warm_start, tol, max_iter)
    if sol.status == INFEASIBLE:
        raise ValueError("cannot project onto an empty polytope")
    return sol.y


def soc_expansion(p: SubsystemParams, N: int, T: float, horizon: int):
    """Affine map from stacked controls to states ``x(k+1..k+horizon)``.

    Returns ``(M, a)`` with ``x = a * x_hat + M @ u``.
    """
    M = np.zeros((horizon, 2 * N))
    for j in range(1, horizon + 1):
        for l in range(min(j, N)):
            w = T * p.alpha ** (j - 1 - l)
            M[j - 1, 2 * l] = w * p.beta
            M[j - 1, 2 * l + 1] = w
    a = p.alpha ** np.arange(1, horizon + 1)
    return M, a


def build_polytope_U(p: SubsystemParams, x_hat: float, N: int, T: float,
                     constrain_terminal: bool = True) -> Polytope:
    """Half-space form of the feasible controls of one battery.

    Per step ``n`` the five rows are ``u+ <= u_max``, ``-u+ <= 0``,
    ``u- <= 0``, ``-u- <= -u_min`` and the rate-ratio row; they are followed
    by upper/lower SoC rows for ``x(k+1), ..., x(k+N-1)`` and, with
    ``constrain_terminal``, ``x(k+N)``. The state ``x(k) = x_hat`` is fixed
    and needs no row.
    """
    n = 2 * N
    rows, rhs = [], []
    cp = 1.0 / p.u_max if p.u_max > 0 else 0.0
    cm = 1.0 / p.u_min if p.u_min < 0 else 0.0
    for k in range(N):
        e_p = np.zeros(n)
        e_p[2 * k] = 1.0
        e_m = np.zeros(n)
        e_m[2 * k + 1] = 1.0
        ratio = np.zeros(n)
        ratio[2 * k] = cp
        ratio[2 * k + 1] = cm
        rows += [e_p, -e_p, e_m, -e_m, ratio]
        rhs += [p.u_max, 0.0, 0.0, -p.u_min, 1.0]
    horizon = N if constrain_terminal else N - 1
    if horizon > 0:
        M, a = soc_expansion(p, N, T, horizon)
        for j in range(horizon):
            rows.append(M[j])
            rhs.append(p.C - a[j] * x_hat)
            rows.append(-M[j])
            rhs.append(a[j] * x_hat)
    layout = "(u+(k), u-(k), ..., u+(k+N-1), u-(k+N-1))"
    return Polytope(np.array(rows), np.array(rhs), layout)


class BatchProjector:
    """Projects onto ``I`` polytopes of identical shape, warm-starting each.

    Used by the ADMM parallel step: row ``i`` of every call is projected onto
    polytope ``i``. The kernel treats rows independently, so splitting the
    batch across workers gives bit-identical results.
    """

    def __init__(self, polytopes: list[Polytope], tol: float = 1e-10,
                 max_iter: int = 20000, workers: int = 1):
        splits = [_Split(P.G, P.h) for P in polytopes]
        if any(s.infeasible for s in splits):
            raise ValueError("empty polytope in batch")
        shapes = {(s.n, s.h.size) for s in splits}
        if len(shapes) != 1:
            raise ValueError("batched polytopes must share their row structure")
        self.tol = tol
        self.max_iter = max_iter
        self.workers = max(int(workers), 1)
        self.LB = np.array([s.lb for s in splits])
        self.UB = np.array([s.ub for s in splits])
        self.G = np.array([s.G for s in splits])
        self.H = np.array([s.h for s in splits])
        I, n = self.LB.shape
        zero = np.zeros(n)
        if not all(s.feasible(zero, 1e-12) for s in splits):
            raise ValueError("batched polytopes must contain the origin")
        starts = [s.start(zero) for s in splits]
        self.Y = np.array([s.y for s in starts])
        self.VSTAT = np.array([s.vstat for s in starts])
        self.WORK = np.array([s.work for s in starts])
        self.NWORK = np.zeros(I, dtype=np.int64)
        self.total_iterations = 0
        self.failures = 0

    def __call__(self, T, rows=None) -> np.ndarray:
        """Project ``T[i]`` onto polytope ``i`` for every ``i`` in ``rows``.

        Rows not listed keep their previous projection. Returns a copy of
        all current projections, shape ``(I, n)``.
        """
        T = np.ascontiguousarray(T, dtype=float)
        if rows is None:
            rows = np.arange(T.shape[0], dtype=np.int64)
        rows = np.asarray(rows, dtype=np.int64)
        if self.workers == 1 or rows.size < 2:
            iters, status = project_batch(T, self.LB, self.UB, self.G, self.H, self.Y,
                                          self.VSTAT, self.WORK, self.NWORK, rows,
                                          self.tol, self.max_iter)
        else:
            iters, status = self._parallel(T, rows)
        self.total_iterations += int(iters.sum())
        bad = int((status != 0).sum())
        if bad:
            self.failures += bad
            log.warning("%d local projections hit the iteration limit", bad)
        return self.Y.copy()

    def _parallel(self, T, rows):
        chunks = [c for c in np.array_split(rows, self.workers) if c.size]

        def run(idx):
            return project_batch(T, self.LB, self.UB, self.G, self.H, self.Y,
                                 self.VSTAT, self.WORK, self.NWORK, idx,
                                 self.tol, self.max_iter)

        with ThreadPoolExecutor(len(chunks)) as ex:
            parts = list(ex.map(run, chunks))
        return (np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]))
