import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from _oracles import (
    conic_objective, dense_consensus, grid_prox, random_params, stacked_qp_objective,
    tiny_instance,
)
from gridsparse import admm
from gridsparse.admm import (
    AdmmConfig, CommsLedger, Residuals, adapt_rho, consensus_update, dual_update,
    local_update_p1, local_update_p2, residuals, soft_threshold,
)
from gridsparse.problem import CouplingOperator, PeakShavingProblem
from gridsparse.qpcore import Polytope, build_polytope_U, project_polytope

cp = pytest.importorskip("cvxpy")


def test_config_validation():
    for bad in ({"rho0": 0}, {"eps": -1}, {"eta": 1.0}, {"mu": 0.5}, {"dual_update_order": "x"}):
        with pytest.raises(ValueError):
            AdmmConfig(**bad)


def test_soft_threshold_examples():
    assert np.array_equal(soft_threshold(1.0, [0.3, 0.4, 0, 0]), np.zeros(4))
    assert np.allclose(soft_threshold(1.0, [3.0, 4.0, 0, 0]), [2.4, 3.2, 0, 0])
    x = np.array([0.1, -2.0])
    assert np.array_equal(soft_threshold(0.0, x), x)
    assert np.array_equal(soft_threshold(0.5, np.zeros(3)), np.zeros(3))
    rows = soft_threshold([1.0, 0.1], [[0.3, 0.4], [3.0, 4.0]])
    assert np.allclose(rows, [[0, 0], [3.0 * 0.98, 4.0 * 0.98]])


@given(st.floats(0, 5), arrays(float, 6, elements=st.floats(-3, 3)))
def test_soft_threshold_law(a, x):
    s = soft_threshold(a, x)
    nx = np.linalg.norm(x)
    assert (not s.any()) == (nx <= a)
    assert np.linalg.norm(s) == pytest.approx(max(nx - a, 0.0), abs=1e-12)


def battery(r, N):
    p = random_params(r)
    return build_polytope_U(p, float(r.uniform(0, p.C)), N, 0.5)


@pytest.mark.parametrize("seed", range(8))
@pytest.mark.parametrize("method", ["signed", "epigraph"])
def test_local_p1_grid_oracle(seed, method):
    r = np.random.default_rng(seed)
    P = battery(r, 1)
    t = r.normal(scale=0.5, size=2)
    sig, rho = float(r.uniform(0, 0.5)), float(r.uniform(0.2, 3))
    u = local_update_p1(t, sig, rho, P, method=method)
    _, ref = grid_prox(t, sig, rho, P, 1)
    val = sig * np.abs(u).sum() + 0.5 * rho * np.sum((u - t) ** 2)
    assert P.contains(u, 1e-9)
    assert val <= ref + 1e-10
    assert val == pytest.approx(ref, abs=1e-4)


@pytest.mark.parametrize("seed", range(8))
def test_local_p1_methods_agree_n2(seed):
    r = np.random.default_rng(100 + seed)
    P = battery(r, 2)
    t = r.normal(scale=0.5, size=4)
    sig, rho = float(r.uniform(0, 0.5)), float(r.uniform(0.2, 3))
    a = local_update_p1(t, sig, rho, P, method="signed")
    b = local_update_p1(t, sig, rho, P, method="epigraph")
    x = cp.Variable(4)
    cp.Problem(cp.Minimize(sig * cp.norm1(x) + rho / 2 * cp.sum_squares(x - t)),
               [P.G @ x <= P.h]).solve(solver=cp.CLARABEL)
    assert np.allclose(a, b, atol=1e-7)
    assert np.allclose(a, x.value, atol=1e-4)


def test_local_p1_unconstrained_is_scalar_shrinkage():
    n = 6
    P = Polytope(np.vstack([np.eye(n), -np.eye(n)]), np.full(2 * n, 1e3))
    t = np.random.default_rng(1).normal(size=n)
    u = local_update_p1(t, 0.6, 2.0, P, method="epigraph")
    assert np.allclose(u, np.sign(t) * np.maximum(np.abs(t) - 0.3, 0), atol=1e-7)


def test_local_p1_zero_weight_is_projection(rng):
    P = battery(rng, 3)
    t = rng.normal(size=6)
    for m in ("signed", "epigraph"):
        assert np.allclose(local_update_p1(t, 0.0, 1.5, P, method=m),
                           project_polytope(t, P, 1e-10), atol=1e-7)
    with pytest.raises(ValueError):
        local_update_p1(t, 0.1, 1.0, P, method="newton")


@pytest.mark.parametrize("seed", range(8))
def test_local_p2_grid_oracle(seed):
    r = np.random.default_rng(seed)
    P = battery(r, 1)
    v, lam = r.normal(scale=0.5, size=(2, 2))
    sig, rho = float(r.uniform(0, 0.5)), float(r.uniform(0.2, 3))
    res = local_update_p2(np.zeros(2), v, lam, sig, rho, P, inner_tol=1e-11, inner_max_iter=20000)
    t = v + lam / rho
    _, ref = grid_prox(t, sig, rho, P, 2)
    u = res.u
    val = sig * np.linalg.norm(u) + 0.5 * rho * np.sum((u - t) ** 2)
    assert res.converged and P.contains(u, 1e-9)
    assert val == pytest.approx(ref, abs=1e-4)


@pytest.mark.parametrize("seed", range(6))
def test_local_p2_conic_n2(seed):
    r = np.random.default_rng(50 + seed)
    P = battery(r, 2)
    v, lam = r.normal(scale=0.5, size=(2, 4))
    sig, rho = float(r.uniform(0, 0.5)), float(r.uniform(0.2, 3))
    res = local_update_p2(np.zeros(4), v, lam, sig, rho, P, inner_tol=1e-11, inner_max_iter=20000)
    x = cp.Variable(4)
    cp.Problem(cp.Minimize(sig * cp.norm(x, 2) + rho / 2 * cp.sum_squares(x - v - lam / rho)),
               [P.G @ x <= P.h]).solve(solver=cp.CLARABEL)
    assert np.allclose(res.u, x.value, atol=1e-4)


def test_local_p2_limits(rng):
    P = battery(rng, 3)
    v, lam = rng.normal(size=(2, 6))
    res = local_update_p2(np.zeros(6), v, lam, 0.0, 1.0, P, inner_tol=1e-11, inner_max_iter=5000)
    assert np.allclose(res.u, project_polytope(v + lam, P, 1e-10), atol=1e-8)
    res = local_update_p2(np.zeros(6), v, lam, 1e4, 1.0, P)
    assert np.allclose(res.u, 0.0, atol=1e-12)
    res = local_update_p2(np.zeros(6), v, lam, 0.1, 1.0, P, inner_tol=1e-14, inner_max_iter=2)
    assert not res.converged and res.iterations == 2


def test_dual_update_examples(rng):
    lam = rng.normal(size=4)
    u = rng.normal(size=4)
    assert np.array_equal(dual_update(lam, 3.0, u, u), lam)
    assert np.allclose(dual_update(np.zeros(3), 2.0, [1.0, 0, 0], np.zeros(3)), [2, 0, 0])
    v = rng.normal(size=4)
    d1 = dual_update(lam, 1.0, v, u) - lam
    assert np.allclose(dual_update(lam, 2.5, v, u) - lam, 2.5 * d1)


def random_problem(r, I=None, N=None):
    I = int(r.integers(1, 6)) if I is None else I
    N = int(r.integers(1, 7)) if N is None else N
    gamma = r.uniform(0.01, 1.0, I)
    hist = r.normal(size=2 * N)
    return PeakShavingProblem.from_window(gamma, hist, N - 1, N, 0.1, np.ones(I))


def test_consensus_dense_oracle():
    r = np.random.default_rng(0)
    for _ in range(100):
        P = random_problem(r)
        u, lam = r.normal(size=(2, P.I, 2 * P.N))
        rho = float(10 ** r.uniform(-3, 1))
        assert np.allclose(consensus_update(P, u, lam, rho), dense_consensus(P, u, lam, rho),
                           atol=1e-10, rtol=0)


def test_consensus_examples(rng):
    P = random_problem(rng, I=3, N=4)
    P0 = PeakShavingProblem(P.coupling, np.zeros(4), np.zeros(4), 0.1, P.sigma)
    assert np.array_equal(consensus_update(P0, np.zeros((3, 8)), np.zeros((3, 8)), 1.0),
                          np.zeros((3, 8)))

    class Null:
        c = 0.0

        def apply(self, u):
            return np.zeros(4)

        def adjoint(self, y):
            return np.zeros((3, 8))

    u, lam = rng.normal(size=(2, 3, 8))
    assert np.allclose(consensus_update(P, u, lam, 2.0, coupling=Null()), u - lam / 2.0)
    # stationarity of the consensus objective
    v = consensus_update(P, u, lam, 0.7)
    grad = P.tracking_grad(v) + 0.7 * (v - u + lam / 0.7)
    assert np.linalg.norm(grad) <= 1e-9


def test_residuals_and_rho():
    u = np.ones((2, 4))
    assert residuals(u, u, u, 3.0) == (0.0, 0.0)
    r = np.random.default_rng(2)
    a, b, c = r.normal(size=(3, 2, 4))
    r1, r2 = residuals(a, b, c, 1.0), residuals(a, b, c, 2.0)
    assert r2.r_pri == pytest.approx(2 * r1.r_pri) and r2.r_dual == pytest.approx(2 * r1.r_dual)
    assert r1.r_pri == pytest.approx(np.linalg.norm(a - b))
    assert r1.r_dual == pytest.approx(np.linalg.norm(b - c))
    assert adapt_rho(1.0, Residuals(10.0, 1.0), 2, 10) == 2.0
    assert adapt_rho(1.0, Residuals(1.0, 10.0), 2, 10) == 0.5
    assert adapt_rho(1.0, Residuals(1.0, 1.5), 2, 10) == 1.0
    assert adapt_rho(1.0, Residuals(0.0, 0.0), 2, 10) == 2.0


def test_ledger_counts():
    L = CommsLedger(N=24, I=50, iterations=7)
    assert L.floats_up == 4 * 24 * 50 * 7
    assert L.floats_down == (2 * 24 + 1) * 50 * 7


def polish_cfg(**kw):
    return AdmmConfig(eps=1e-7, max_iter=20000, **kw)


@pytest.mark.parametrize("seed", range(5))
def test_kappa_zero_matches_stacked_qp(seed):
    r = np.random.default_rng(seed)
    prob, polys, *_ = tiny_instance(r, kappa=0.0)
    res = admm.solve(prob, polys, polish_cfg())
    ref, _ = stacked_qp_objective(prob, polys)
    assert res.converged
    assert prob.objective(res.u) == pytest.approx(ref, rel=1e-5, abs=1e-9)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("p", [1, 2])
def test_regularized_matches_conic(seed, p):
    r = np.random.default_rng(10 + seed)
    prob, polys, *_ = tiny_instance(r, p=p)
    res = admm.solve(prob, polys, polish_cfg())
    ref, _ = conic_objective(prob, polys)
    assert prob.objective(res.u) == pytest.approx(ref, rel=1e-5, abs=1e-9)
    if p == 1:
        assert stacked_qp_objective(prob, polys)[0] == pytest.approx(ref, rel=1e-6, abs=1e-9)


@pytest.mark.parametrize("order", ["paper", "standard"])
def test_orders_agree_and_iterates_feasible(order):
    r = np.random.default_rng(4)
    prob, polys, *_ = tiny_instance(r, I=4, N=5)
    worst = []
    res = admm.solve(prob, polys, polish_cfg(dual_update_order=order),
                     callback=lambda m, u, v, lam, rho: worst.append(
                         max(P.violation(ui) for P, ui in zip(polys, u))))
    ref, _ = conic_objective(prob, polys)
    assert res.converged
    assert max(worst) <= 1e-9
    assert prob.objective(res.u) == pytest.approx(ref, rel=1e-5)
    assert np.linalg.norm(res.u - res.v) <= res.history[-1].r_pri / res.rho + 1e-15
    assert np.linalg.norm(res.u - res.v) <= 1e-7 / res.rho


def test_huge_weights_give_zero():
    r = np.random.default_rng(5)
    for p in (1, 2):
        prob, polys, *_ = tiny_instance(r, p=p, kappa=1e4)
        res = admm.solve(prob, polys)
        assert np.abs(res.u).max() <= 1e-4


def test_warm_start_at_solution():
    r = np.random.default_rng(6)
    prob, polys, *_ = tiny_instance(r, I=3, N=4)
    cfg = AdmmConfig(eps=1e-6)
    res = admm.solve(prob, polys, cfg)
    cfg2 = AdmmConfig(eps=1e-6, rho0=res.rho)
    again = admm.solve(prob, polys, cfg2, init=(res.u, res.v, res.lam))
    assert again.iterations <= 2


def test_ledger_and_trace(tmp_path):
    r = np.random.default_rng(7)
    prob, polys, *_ = tiny_instance(r, I=3, N=4)
    res = admm.solve(prob, polys, trace=True)
    assert res.ledger.floats_up == 4 * 4 * 3 * res.iterations
    assert res.ledger.floats_down == 9 * 3 * res.iterations
    assert len(res.history) == len(res.trace) == res.iterations
    res.write_trace(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "iteration,r_pri,r_dual,rho,objective" and len(lines) == res.iterations + 1


def test_max_iter_status():
    r = np.random.default_rng(8)
    prob, polys, *_ = tiny_instance(r, I=3, N=4)
    res = admm.solve(prob, polys, AdmmConfig(eps=1e-12, max_iter=3))
    assert res.status == "max_iter" and res.iterations == 3 and not res.converged


def test_dimension_checks():
    r = np.random.default_rng(9)
    prob, polys, *_ = tiny_instance(r)
    with pytest.raises(ValueError):
        admm.solve(prob, polys[:1])


def test_workers_bit_identical():
    r = np.random.default_rng(11)
    prob, polys, *_ = tiny_instance(r, I=9, N=6)
    a = admm.solve(prob, polys, AdmmConfig(workers=1))
    b = admm.solve(prob, polys, AdmmConfig(workers=3))
    assert np.array_equal(a.u, b.u) and a.iterations == b.iterations
