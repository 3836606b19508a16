"""Peak-shaving objective with a weighted mixed-norm regularizer.

Controls are handled as arrays of shape ``(I, 2N)``: row ``i`` is the group
of subsystem ``i``, stacked as ``(u+(k), u-(k), ..., u+(k+N-1), u-(k+N-1))``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CouplingOperator:
    """Implicit ``A_i = (1/I) * kron(eye(N), [1, gamma_i])``."""

    gamma: np.ndarray
    N: int

    def __post_init__(self):
        object.__setattr__(self, "gamma", np.asarray(self.gamma, dtype=float))

    @property
    def I(self) -> int:
        return self.gamma.size

    @property
    def c(self) -> float:
        """Scalar with ``A A^T = c * eye(N)``."""
        return float(np.sum(1.0 + self.gamma**2)) / self.I**2

    def apply(self, u) -> np.ndarray:
        """``sum_i A_i u_i`` in R^N."""
        u = self._blocks(u)
        pairs = u.reshape(self.I, self.N, 2)
        return (pairs[:, :, 0] + self.gamma[:, None] * pairs[:, :, 1]).sum(axis=0) / self.I

    def adjoint(self, y) -> np.ndarray:
        """``A^T y`` as an ``(I, 2N)`` array."""
        y = np.asarray(y, dtype=float)
        out = np.empty((self.I, self.N, 2))
        out[:, :, 0] = y[None, :]
        out[:, :, 1] = self.gamma[:, None] * y[None, :]
        return out.reshape(self.I, 2 * self.N) / self.I

    def dense(self) -> np.ndarray:
        """Full ``N x 2NI`` matrix; testing only."""
        blocks = [np.kron(np.eye(self.N), np.array([[1.0, g]])) / self.I for g in self.gamma]
        return np.hstack(blocks)

    def _blocks(self, u):
        u = np.asarray(u, dtype=float)
        if u.ndim == 1:
            if u.size != 2 * self.N * self.I:
                raise ValueError(f"expected {2 * self.N * self.I} entries, got {u.size}")
            return u.reshape(self.I, 2 * self.N)
        if u.shape != (self.I, 2 * self.N):
            raise ValueError(f"expected blocks of shape {(self.I, 2 * self.N)}, got {u.shape}")
        return u


def coupling_apply(coupling: CouplingOperator, u) -> np.ndarray:
    return coupling.apply(u)


def reference_trajectory(w_bar_history, k: int, N: int) -> np.ndarray:
    """Trailing ``N``-step mean of ``w_bar`` at instants ``k, ..., k+N-1``.

    ``w_bar_history[j]`` is the mean net consumption at instant ``j``.
    Indices before 0 are padded with ``w_bar_history[0]``.
    """
    w = np.asarray(w_bar_history, dtype=float)
    if k + N > w.size:
        raise ValueError(f"history of length {w.size} does not reach instant {k + N - 1}")
    idx = np.arange(k - N + 1, k + N)
    padded = w[np.maximum(idx, 0)]
    return np.lib.stride_tricks.sliding_window_view(padded, N).sum(axis=1) / N


def mixed_norm(u, sigma, p: int) -> float:
    """``sum_i sigma_i * ||u_i||_p`` over the rows of ``u``."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    sigma = np.asarray(sigma, dtype=float)
    if p == 1:
        norms = np.abs(u).sum(axis=1)
    elif p == 2:
        norms = np.sqrt((u * u).sum(axis=1))
    else:
        raise ValueError(f"p must be 1 or 2, got {p}")
    return float(np.dot(sigma, norms))


@dataclass
class PeakShavingProblem:
    """Tracking term ``(1/N)||A u - b||^2`` plus ``kappa * sum sigma_i ||u_i||_p``."""

    coupling: CouplingOperator
    zeta_bar: np.ndarray
    w_bar: np.ndarray
    kappa: float
    sigma: np.ndarray
    p: int = 2

    def __post_init__(self):
        self.zeta_bar = np.asarray(self.zeta_bar, dtype=float)
        self.w_bar = np.asarray(self.w_bar, dtype=float)
        self.sigma = np.broadcast_to(np.asarray(self.sigma, dtype=float),
                                     (self.coupling.I,)).copy()
        if self.zeta_bar.shape != (self.N,) or self.w_bar.shape != (self.N,):
            raise ValueError("reference and mean consumption must have length N")
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")
        if (self.sigma < 0).any():
            raise ValueError("weights must be nonnegative")
        if self.p not in (1, 2):
            raise ValueError(f"p must be 1 or 2, got {self.p}")

    @property
    def N(self) -> int:
        return self.coupling.N

    @property
    def I(self) -> int:
        return self.coupling.I

    @property
    def b(self) -> np.ndarray:
        return self.zeta_bar - self.w_bar

    @property
    def sigma_tilde(self) -> np.ndarray:
        return self.kappa * self.sigma

    @classmethod
    def from_window(cls, gamma, w_bar_history, k, N, kappa, sigma, p=2):
        w_hist = np.asarray(w_bar_history, dtype=float)
        return cls(CouplingOperator(gamma, N), reference_trajectory(w_hist, k, N),
                   w_hist[k:k + N], kappa, sigma, p)

    def tracking(self, u) -> float:
        r = self.coupling.apply(u) - self.b
        return float(r @ r) / self.N

    def objective(self, u) -> float:
        u = self.coupling._blocks(u)
        return self.tracking(u) + mixed_norm(u, self.sigma_tilde, self.p)

    def tracking_grad(self, u) -> np.ndarray:
        return (2.0 / self.N) * self.coupling.adjoint(self.coupling.apply(u) - self.b)


def objective_value(problem: PeakShavingProblem, u) -> float:
    return problem.objective(u)


def aggregate_demand(u, profiles, gamma) -> np.ndarray:
    """Mean grid demand ``z_bar = w_bar + sum_i A_i u_i``.

    ``profiles`` holds each household's net consumption over the horizon,
    shape ``(I, N)``.
    """
    profiles = np.atleast_2d(np.asarray(profiles, dtype=float))
    coupling = CouplingOperator(gamma, profiles.shape[1])
    return profiles.mean(axis=0) + coupling.apply(u)
