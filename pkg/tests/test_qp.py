import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deeplcc.qp import INF, QpSettings, QpSolver, QpStatus, QuadraticProgram, solve
from oracles import brute_force_qp


def random_qp(rng, d, n_eq, r, psd_rank=None):
    M = rng.standard_normal((d, psd_rank or d))
    P = M @ M.T + (1e-1 * np.eye(d) if psd_rank is None else 0)
    q = rng.standard_normal(d) * 3
    A_eq = rng.standard_normal((n_eq, d))
    x_feas = rng.standard_normal(d)
    b_eq = A_eq @ x_feas
    G = rng.standard_normal((r, d))
    Gx = G @ x_feas
    lo = Gx - rng.uniform(0.0, 1.0, r)
    hi = Gx + rng.uniform(0.0, 1.0, r)
    drop = rng.random(r)
    lo[drop < 0.3] = -np.inf
    hi[drop > 0.7] = np.inf
    return QuadraticProgram(P, q, A_eq, b_eq, G, lo, hi)


def as_one_sided(qp):
    rows_G, rows_h = [], []
    for g, l, h in zip(qp.A_in, qp.lo, qp.hi):
        if np.isfinite(h):
            rows_G.append(g)
            rows_h.append(h)
        if np.isfinite(l):
            rows_G.append(-g)
            rows_h.append(-l)
    d = qp.dim
    return (np.array(rows_G).reshape(-1, d), np.array(rows_h))


class TestExamples:
    def test_unconstrained_minimum(self):
        # with the 1/2 x'Px convention the minimizer is P^-1(-q) = (2, 2)
        sol = solve(QuadraticProgram(np.eye(2), [-2.0, -2.0]))
        assert sol.optimal and np.allclose(sol.x, [2.0, 2.0], atol=1e-12)
        assert sol.kkt_residual <= 1e-9

    def test_box_projection(self):
        sol = solve(QuadraticProgram([[2.0]], [0.0], A_in=[[1.0]], lo=[1.0], hi=[2.0]))
        assert sol.optimal and sol.x[0] == pytest.approx(1.0, abs=1e-12)
        assert sol.z_in[0] == pytest.approx(2.0, abs=1e-12)

    def test_equality(self):
        sol = solve(QuadraticProgram(np.eye(2), np.zeros(2), A_eq=[[1.0, 1.0]], b_eq=[1.0]))
        assert sol.optimal and np.allclose(sol.x, [0.5, 0.5], atol=1e-12)

    def test_redundant_equalities(self):
        A = np.array([[1.0, 1.0], [2.0, 2.0]])
        sol = solve(QuadraticProgram(np.eye(2), np.zeros(2), A, [1.0, 2.0]))
        assert sol.optimal and np.allclose(sol.x, [0.5, 0.5])

    def test_inconsistent_equalities(self):
        A = np.array([[1.0, 1.0], [1.0, 1.0]])
        sol = solve(QuadraticProgram(np.eye(2), np.zeros(2), A, [1.0, 2.0]))
        assert sol.status is QpStatus.PRIMAL_INFEASIBLE

    def test_conflicting_inequalities(self):
        G = np.array([[1.0], [1.0]])
        sol = solve(QuadraticProgram([[1.0]], [0.0], A_in=G, lo=[2.0, -INF], hi=[INF, 1.0]))
        assert sol.status is QpStatus.PRIMAL_INFEASIBLE
        assert not sol.optimal

    def test_sentinel_rows_dropped(self):
        qp = QuadraticProgram(np.eye(2), np.zeros(2), A_in=np.eye(2), lo=[-INF, 0.5],
                              hi=[INF, INF])
        assert qp.A_in.shape == (1, 2)
        assert np.allclose(solve(qp).x, [0.0, 0.5])

    def test_max_iterations(self):
        rng = np.random.default_rng(0)
        qp = random_qp(rng, 10, 0, 20)
        sol = solve(qp, QpSettings(max_iter=1))
        full = solve(qp)
        if full.iterations > 1:
            assert sol.status is QpStatus.MAX_ITERATIONS

    def test_semidefinite_objective(self):
        # zero curvature along x2, pinned by the box
        qp = QuadraticProgram(np.diag([1.0, 0.0]), [0.0, 1.0], A_in=np.eye(2), lo=[-1, -3],
                              hi=[1, 3])
        sol = solve(qp)
        assert sol.optimal and np.allclose(sol.x, [0.0, -3.0], atol=1e-6)


class TestValidation:
    def test_asymmetric(self):
        with pytest.raises(ValueError):
            QuadraticProgram([[1.0, 1.0], [0.0, 1.0]], [0, 0])

    def test_bad_bounds(self):
        with pytest.raises(ValueError):
            QuadraticProgram(np.eye(1), [0.0], A_in=[[1.0]], lo=[2.0], hi=[1.0])

    @pytest.mark.parametrize("kw", [dict(q=[0.0]), dict(A_eq=np.ones((1, 3)), b_eq=[1.0]),
                                    dict(A_in=np.ones((1, 3)))])
    def test_dimension_errors(self, kw):
        base = dict(P=np.eye(2), q=[0.0, 0.0])
        base.update(kw)
        with pytest.raises(ValueError):
            QuadraticProgram(**base)


def test_matches_brute_force_on_random_instances():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        d = int(rng.integers(1, 31))
        n_eq = int(rng.integers(0, min(d, 5)))
        r = int(rng.integers(0, 9))
        qp = random_qp(rng, d, n_eq, r)
        sol = solve(qp)
        assert sol.optimal
        G, h = as_one_sided(qp)
        ref = brute_force_qp(qp.P, qp.q, qp.A_eq, qp.b_eq, G, h)
        worst = max(worst, abs(sol.objective - ref[0]) / max(1.0, abs(ref[0])))
    assert worst <= 1e-6


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 20), st.integers(0, 3), st.integers(0, 20))
def test_solution_satisfies_kkt(seed, d, n_eq, r):
    rng = np.random.default_rng(seed)
    qp = random_qp(rng, d, min(n_eq, d - 1), r)
    sol = solve(qp)
    assert sol.optimal and sol.kkt_residual <= 1e-8
    x = sol.x
    if qp.A_eq.shape[0]:
        assert np.allclose(qp.A_eq @ x, qp.b_eq, atol=1e-7)
    Ax = qp.A_in @ x
    assert np.all(Ax >= qp.lo - 1e-7) and np.all(Ax <= qp.hi + 1e-7)
    # multipliers: positive only at an active lower bound, negative only at an active upper bound
    z = sol.z_in
    pos, neg = z > 1e-8, z < -1e-8
    assert np.all(np.abs(z[pos] * (Ax - qp.lo)[pos]) <= 1e-6)
    assert np.all(np.abs(z[neg] * (qp.hi - Ax)[neg]) <= 1e-6)
    grad = qp.P @ x + qp.q - qp.A_eq.T @ sol.y_eq - qp.A_in.T @ z
    assert np.abs(grad).max() <= 1e-6 * max(1.0, np.abs(qp.q).max())


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(1e-3, 1e3))
def test_scaling_invariance(seed, c):
    rng = np.random.default_rng(seed)
    qp = random_qp(rng, 12, 2, 10)
    a = solve(qp)
    b = solve(QuadraticProgram(qp.P * c, qp.q * c, qp.A_eq, qp.b_eq, qp.A_in, qp.lo, qp.hi))
    assert np.allclose(a.x, b.x, atol=1e-8 * max(1.0, np.abs(a.x).max()))


def test_deterministic_repeat_and_workspace_reuse():
    rng = np.random.default_rng(7)
    qp = random_qp(rng, 25, 3, 15)
    s1, s2 = solve(qp), solve(qp)
    assert np.array_equal(s1.x, s2.x)
    solver = QpSolver()
    a = solver.solve(qp)
    b = solver.solve(qp.with_data(q=qp.q * 2.0))
    c = solve(QuadraticProgram(qp.P, qp.q * 2.0, qp.A_eq, qp.b_eq, qp.A_in, qp.lo, qp.hi))
    assert np.array_equal(a.x, s1.x)
    assert np.allclose(b.x, c.x, atol=1e-12)


def test_csv_bundle_round_trip(tmp_path):
    qp = random_qp(np.random.default_rng(3), 6, 2, 4)
    qp.dump_csv(tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == sorted(
        f"{n}.csv" for n in ("P", "q", "A_eq", "b_eq", "A_in", "lo", "hi"))
    back = QuadraticProgram.load_csv(tmp_path)
    for name in ("P", "q", "A_eq", "b_eq", "A_in", "lo", "hi"):
        assert np.array_equal(getattr(back, name), getattr(qp, name))
