import numpy as np
import pytest
from hypothesis import given, strategies as st

from _oracles import enumerate_qp, membership_by_simulation, random_params
from gridsparse.model import SubsystemParams, sample_params, PARAM_STATS
from gridsparse.qpcore import (
    INFEASIBLE, SOLVED, BatchProjector, DenseQP, Polytope, build_polytope_U, kkt_residual,
    project_polytope, solve_qp,
)


def box(n, lo=-1.0, hi=1.0):
    return Polytope(np.vstack([np.eye(n), -np.eye(n)]), np.concatenate([np.full(n, hi), np.full(n, -lo)]))


def test_box_examples():
    sol = solve_qp(DenseQP(np.eye(3), np.zeros(3), box(3)))
    assert sol.status == SOLVED and np.allclose(sol.y, 0)
    sol = solve_qp(DenseQP(np.eye(3), np.array([-3.0, 0, 0]), box(3)))
    assert np.allclose(sol.y, [1, 0, 0]) and sol.kkt_residual <= 1e-8


def test_infeasible_detected():
    P = Polytope([[1.0, 0.0], [-1.0, 0.0]], [-1.0, -1.0])
    assert solve_qp(DenseQP(np.eye(2), np.zeros(2), P)).status == INFEASIBLE
    P = Polytope([[1.0, 1.0], [-1.0, -1.0]], [-1.0, -1.0])
    assert solve_qp(DenseQP(np.eye(2), np.zeros(2), P)).status == INFEASIBLE
    with pytest.raises(ValueError):
        project_polytope([0.0, 0.0], P)


def test_rejects_indefinite():
    with pytest.raises(ValueError):
        solve_qp(DenseQP(np.diag([1.0, -1.0]), np.zeros(2), box(2)))


@st.composite
def random_qp(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    r = np.random.default_rng(seed)
    n = int(r.integers(1, 7))
    m = int(r.integers(1, 9))
    B = r.normal(size=(n, n))
    H = B @ B.T + 0.1 * np.eye(n)
    g = r.normal(size=n) * 3
    G = r.normal(size=(m, n))
    x0 = r.normal(size=n)
    h = G @ x0 + r.uniform(0, 1, m)  # nonempty by construction
    if draw(st.booleans()):
        H = np.eye(n) * r.uniform(0.5, 3)
    return H, g, G, h


@given(random_qp())
def test_matches_enumeration(qp):
    H, g, G, h = qp
    sol = solve_qp(DenseQP(H, g, Polytope(G, h)), tol=1e-10)
    ref = enumerate_qp(H, g, G, h)
    assert sol.status == SOLVED
    assert np.allclose(sol.y, ref, atol=1e-6)
    assert kkt_residual(DenseQP(H, g, Polytope(G, h)), sol.y, sol.multipliers) <= 1e-7


@given(random_qp())
def test_value_below_random_feasible_points(qp):
    H, g, G, h = qp
    q = DenseQP(H, g, Polytope(G, h))
    sol = solve_qp(q)
    r = np.random.default_rng(0)
    center = np.linalg.lstsq(G, h - 0.5, rcond=None)[0]
    pts = sol.y + r.normal(scale=0.5, size=(100, g.size))
    pts = np.vstack([pts, center])
    for y in pts[np.all(pts @ G.T <= h, axis=1)]:
        assert q.value(sol.y) <= q.value(y) + 1e-8


def test_warm_start_from_solution():
    r = np.random.default_rng(3)
    G = r.normal(size=(8, 5))
    h = np.abs(r.normal(size=8))
    q = DenseQP(np.eye(5), r.normal(size=5) * 4, Polytope(G, h))
    sol = solve_qp(q)
    again = solve_qp(q, warm_start=sol.active)
    assert again.iterations <= 2 and np.allclose(again.y, sol.y, atol=1e-12)
    again = solve_qp(q, warm_start=sol.y)
    assert np.allclose(again.y, sol.y, atol=1e-10)


def test_phase_one_start():
    # origin infeasible: 1 <= y0 <= 2
    P = Polytope([[1.0, 0.0], [-1.0, 0.0], [1.0, 1.0]], [2.0, -1.0, 2.5])
    sol = solve_qp(DenseQP(np.eye(2), np.array([0.0, -5.0]), P))
    assert sol.status == SOLVED and np.allclose(sol.y, [1.0, 1.5])


def test_projection_examples():
    P = box(2)
    assert np.allclose(project_polytope([0.2, -0.3], P), [0.2, -0.3])
    assert np.allclose(project_polytope([3.0, 0.5], P), [1.0, 0.5])


def battery_polytope(seed, N=4):
    r = np.random.default_rng(seed)
    p = sample_params(1, PARAM_STATS, r)[0]
    return build_polytope_U(p, float(r.uniform(0, p.C)), N, 0.5)


@given(st.integers(0, 10000))
def test_projection_properties(seed):
    P = battery_polytope(seed)
    r = np.random.default_rng(seed)
    x, y = r.normal(scale=0.6, size=(2, P.dim))
    px, py = project_polytope(x, P), project_polytope(y, P)
    assert P.contains(px, 1e-9)
    assert np.linalg.norm(px - py) <= np.linalg.norm(x - y) + 1e-9
    assert np.allclose(project_polytope(px, P), px, atol=1e-9)
    # variational inequality against feasible samples
    for z in r.uniform(-0.5, 0.5, size=(50, P.dim)):
        if P.contains(z):
            assert (x - px) @ (z - px) <= 1e-8


def test_row_count_and_single_step():
    p = SubsystemParams(alpha=0.99, beta=0.95, gamma=0.95, C=2.0, u_max=0.5, u_min=-0.5)
    P = build_polytope_U(p, 1.0, 1, 0.5, constrain_terminal=False)
    assert P.G.shape == (5, 2)
    for N in (1, 3, 24):
        assert build_polytope_U(p, 1.0, N, 0.5, True).G.shape[0] == 5 * N + 2 * N
        assert build_polytope_U(p, 1.0, N, 0.5, False).G.shape[0] == 5 * N + 2 * (N - 1)


@pytest.mark.parametrize("terminal", [True, False])
def test_membership_matches_simulation(terminal):
    r = np.random.default_rng(7)
    agree = inside = 0
    for _ in range(1000):
        p = random_params(r)
        x = float(r.uniform(0, p.C))
        N = int(r.integers(1, 6))
        P = build_polytope_U(p, x, N, 0.5, terminal)
        # mix of interior, boundary-ish and clearly infeasible draws
        u = np.empty(2 * N)
        u[0::2] = r.uniform(-0.05, 1.1, N) * p.u_max
        u[1::2] = r.uniform(-0.05, 1.1, N) * p.u_min
        u[r.random(2 * N) < 0.4] = 0.0
        sim = membership_by_simulation(u, p, x, 0.5, terminal)
        agree += P.contains(u, 1e-9) == sim
        inside += sim
    assert agree == 1000
    assert 100 < inside < 900


@given(st.integers(0, 10000))
def test_zero_in_polytope(seed):
    r = np.random.default_rng(seed)
    p = random_params(r)
    assert build_polytope_U(p, float(r.uniform(0, p.C)), 5, 0.5).contains(np.zeros(10))


def test_batch_matches_single_and_workers():
    polys = [battery_polytope(s, N=6) for s in range(12)]
    T = np.random.default_rng(0).normal(scale=0.8, size=(12, 12))
    single = np.array([project_polytope(t, P, tol=1e-10) for t, P in zip(T, polys)])
    a = BatchProjector(polys)(T)
    b = BatchProjector(polys, workers=4)(T)
    assert np.allclose(a, single, atol=1e-9)
    assert np.array_equal(a, b)
    # subset of rows leaves the others untouched
    B = BatchProjector(polys)
    first = B(T)
    out = B(T + 1.0, rows=[2, 5])
    keep = np.setdiff1d(np.arange(12), [2, 5])
    assert np.array_equal(out[keep], first[keep])
    assert np.allclose(out[2], project_polytope(T[2] + 1.0, polys[2], tol=1e-10), atol=1e-9)


def test_batch_requires_origin():
    P = Polytope([[1.0, 0.0], [-1.0, 0.0]], [2.0, -1.0])
    with pytest.raises(ValueError):
        BatchProjector([P])
