"""Compiled primal active-set kernel for Euclidean projection onto polytopes.

The polytope is ``{y : lb <= y <= ub, G y <= h}`` with unit-norm rows in
``G``. Simple bounds are handled by fixing variables, so the linear algebra
per iteration only involves the general rows in the working set.
"""

import numpy as np
from numba import njit

FREE, LOWER, UPPER, FIXED = 0, -1, 1, 2


@njit(cache=True, nogil=True)
def project_active_set(t, lb, ub, G, h, y, vstat, work, nwork, tol, max_iter):
    """Minimize ``0.5 * ||y - t||^2`` starting from a feasible ``y``.

    ``vstat`` marks variables held at a bound and ``work[:nwork]`` lists the
    general rows in the working set; both are updated in place and describe
    a linearly independent active set. Returns
    ``(nwork, iterations, status, lam, nu)`` with status 0 on success and 1
    when ``max_iter`` is hit. ``lam`` holds multipliers of the general rows
    and ``nu`` the signed bound multipliers, so that at the solution
    ``y - t + G^T lam + nu = 0``.
    """
    n = t.size
    m = h.size
    inw = np.zeros(m, np.bool_)
    for a in range(nwork):
        inw[work[a]] = True
    scale = 1.0
    for j in range(n):
        scale = max(scale, abs(t[j]), abs(y[j]))
    ptol = 1e-13 * scale
    free = np.empty(n, np.int64)
    p = np.zeros(n)
    g = np.zeros(n)
    lam_out = np.zeros(m)
    nu_out = np.zeros(n)
    status = 1
    it = 0
    while it < max_iter:
        it += 1
        nf = 0
        for j in range(n):
            if vstat[j] == FREE:
                free[nf] = j
                nf += 1
        for j in range(n):
            p[j] = 0.0
        # rows whose free part vanished are implied by the bounds
        a = 0
        while a < nwork:
            nrm = 0.0
            for b in range(nf):
                nrm += G[work[a], free[b]] ** 2
            if nrm <= 1e-24:
                inw[work[a]] = False
                for c in range(a, nwork - 1):
                    work[c] = work[c + 1]
                nwork -= 1
            else:
                a += 1
        lam = np.zeros(nwork)
        if nwork > 0:
            GW = np.empty((nwork, nf))
            for a in range(nwork):
                r = work[a]
                for b in range(nf):
                    GW[a, b] = G[r, free[b]]
            d = np.empty(nf)
            for b in range(nf):
                d[b] = t[free[b]] - y[free[b]]
            lam = np.linalg.solve(GW @ GW.T, GW @ d)
            pf = d - GW.T @ lam
            for b in range(nf):
                p[free[b]] = pf[b]
        else:
            for b in range(nf):
                j = free[b]
                p[j] = t[j] - y[j]
        pmax = 0.0
        for j in range(n):
            pmax = max(pmax, abs(p[j]))

        if pmax <= ptol:
            for j in range(n):
                g[j] = 0.0
            for a in range(nwork):
                r = work[a]
                for j in range(n):
                    g[j] += lam[a] * G[r, j]
            worst = -tol
            kind = 0
            idx = -1
            for a in range(nwork):
                if lam[a] < worst:
                    worst = lam[a]
                    kind = 1
                    idx = a
            for j in range(n):
                if vstat[j] == UPPER:
                    mu = t[j] - y[j] - g[j]
                    if mu < worst:
                        worst = mu
                        kind = 2
                        idx = j
                elif vstat[j] == LOWER:
                    mu = y[j] - t[j] + g[j]
                    if mu < worst:
                        worst = mu
                        kind = 2
                        idx = j
            if kind == 0:
                for a in range(nwork):
                    lam_out[work[a]] = lam[a]
                for j in range(n):
                    if vstat[j] != FREE:
                        nu_out[j] = t[j] - y[j] - g[j]
                status = 0
                break
            if kind == 1:
                inw[work[idx]] = False
                for a in range(idx, nwork - 1):
                    work[a] = work[a + 1]
                nwork -= 1
            else:
                vstat[idx] = FREE
            continue

        alpha = 1.0
        bkind = 0
        bidx = -1
        pnoise = 1e-11 * pmax + 1e-14 * scale
        for b in range(nf):
            j = free[b]
            if p[j] > pnoise and ub[j] < np.inf:
                a_ = max((ub[j] - y[j]) / p[j], 0.0)
                if a_ < alpha:
                    alpha = a_
                    bkind = 2
                    bidx = j
            elif p[j] < -pnoise and lb[j] > -np.inf:
                a_ = max((lb[j] - y[j]) / p[j], 0.0)
                if a_ < alpha:
                    alpha = a_
                    bkind = 3
                    bidx = j
        for r in range(m):
            if inw[r]:
                continue
            gp = 0.0
            gy = 0.0
            for b in range(nf):
                j = free[b]
                gp += G[r, j] * p[j]
            if gp <= pnoise:
                continue
            for j in range(n):
                gy += G[r, j] * y[j]
            a_ = max((h[r] - gy) / gp, 0.0)
            if a_ < alpha:
                alpha = a_
                bkind = 1
                bidx = r
        for b in range(nf):
            j = free[b]
            y[j] = min(max(y[j] + alpha * p[j], lb[j]), ub[j])
        if bkind == 1:
            work[nwork] = bidx
            nwork += 1
            inw[bidx] = True
        elif bkind == 2:
            y[bidx] = ub[bidx]
            vstat[bidx] = UPPER
        elif bkind == 3:
            y[bidx] = lb[bidx]
            vstat[bidx] = LOWER
    return nwork, it, status, lam_out, nu_out


@njit(cache=True, nogil=True)
def project_batch(T, LB, UB, G, H, Y, VSTAT, WORK, NWORK, rows, tol, max_iter):
    """``project_active_set`` for each index in ``rows`` over stacked polytopes.

    Each row is processed independently, so results do not depend on how
    rows are grouped into batches. Returns per-row iteration counts and
    status codes.
    """
    iters = np.zeros(rows.size, np.int64)
    status = np.zeros(rows.size, np.int64)
    for a in range(rows.size):
        i = rows[a]
        nw, it, st, _, _ = project_active_set(
            T[i], LB[i], UB[i], G[i], H[i], Y[i], VSTAT[i], WORK[i], NWORK[i],
            tol, max_iter)
        NWORK[i] = nw
        iters[a] = it
        status[a] = st
    return iters, status
