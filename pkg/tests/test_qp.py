import cvxpy as cp
import numpy as np
import pytest

from avoidmpc.qp import solve_qp


def _random_qp(rng, n=6, mi=8, me=2):
    M = rng.standard_normal((n, n))
    H = M @ M.T + 0.5 * np.eye(n)
    g = rng.standard_normal(n)
    G = rng.standard_normal((mi, n))
    x_feas = rng.standard_normal(n)
    h = G @ x_feas + rng.uniform(0.0, 1.0, mi)
    A = rng.standard_normal((me, n))
    b = A @ x_feas
    return H, g, G, h, A, b


def _cvxpy(H, g, G, h, A, b):
    x = cp.Variable(g.size)
    prob = cp.Problem(cp.Minimize(0.5 * cp.quad_form(x, cp.psd_wrap(H)) + g @ x),
                      [G @ x <= h, A @ x == b])
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    return x.value, prob.value


@pytest.mark.parametrize("seed", range(20))
def test_matches_cvxpy(seed):
    rng = np.random.default_rng(seed)
    H, g, G, h, A, b = _random_qp(rng)
    res = solve_qp(H, g, G, h, A, b)
    assert res.ok
    x_ref, v_ref = _cvxpy(H, g, G, h, A, b)
    assert res.objective == pytest.approx(v_ref, rel=1e-7, abs=1e-7)
    np.testing.assert_allclose(res.x, x_ref, atol=1e-5)
    assert np.max(G @ res.x - h) <= 1e-8
    np.testing.assert_allclose(A @ res.x, b, atol=1e-8)


def test_unconstrained_is_newton_step():
    H = np.array([[2.0, 0.5], [0.5, 1.0]])
    g = np.array([1.0, -1.0])
    res = solve_qp(H, g)
    np.testing.assert_allclose(res.x, -np.linalg.solve(H, g), atol=1e-12)


def test_kkt_multipliers_nonnegative_and_complementary():
    rng = np.random.default_rng(7)
    H, g, G, h, A, b = _random_qp(rng, n=5, mi=10, me=1)
    res = solve_qp(H, g, G, h, A, b)
    assert np.all(res.lam >= -1e-10)
    slack = h - G @ res.x
    assert np.max(np.abs(res.lam * slack)) <= 1e-8
    grad = H @ res.x + g + G.T @ res.lam + A.T @ res.nu
    assert np.linalg.norm(grad) <= 1e-7


def test_infeasible_reported():
    H = np.eye(1)
    res = solve_qp(H, np.zeros(1), G=[[1.0], [-1.0]], h=[-1.0, -1.0])
    assert not res.ok


def test_active_hint_gives_same_answer():
    rng = np.random.default_rng(3)
    H, g, G, h, A, b = _random_qp(rng)
    cold = solve_qp(H, g, G, h, A, b)
    warm = solve_qp(H, g, G, h, A, b, active_hint=cold.active)
    np.testing.assert_allclose(cold.x, warm.x, atol=1e-9)
    assert warm.iterations <= cold.iterations
