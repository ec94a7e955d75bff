import numpy as np
import pytest
from hypothesis import given, strategies as st

from hdeepc.densekit import QpProblem, QpSettings, QpStatus, least_squares_solve, qp_solve, rank_of
from hdeepc.errors import DimensionMismatch, NonConvex
from oracles import elimination_rank, enumerate_active_sets, equality_kkt, finite_difference_gradient, pseudoinverse_solution


def box_problem():
    # min (x-1)^2 s.t. x <= 0.5
    return QpProblem([[2.0]], [-2.0], [[1.0]], [-np.inf], [0.5])


def test_active_box_constraint():
    sol = qp_solve(box_problem())
    assert sol.status is QpStatus.OPTIMAL
    assert sol.z_star[0] == pytest.approx(0.5, abs=1e-7)


def test_symmetric_equality():
    p = QpProblem(2 * np.eye(2), [0, 0], [[1, 1]], [2], [2])
    sol = qp_solve(p)
    np.testing.assert_allclose(sol.z_star, [1, 1], atol=1e-7)


def test_unconstrained_two_step_cost():
    # (1+u0)^2 + u0^2 + u1^2
    P = np.array([[4.0, 0.0], [0.0, 2.0]])
    q = np.array([2.0, 0.0])
    sol = qp_solve(QpProblem(P, q, np.zeros((0, 2)), [], []))
    np.testing.assert_allclose(sol.z_star, [-0.5, 0.0], atol=1e-8)
    f = lambda z: (1 + z[0]) ** 2 + z[0] ** 2 + z[1] ** 2
    np.testing.assert_allclose(finite_difference_gradient(f, sol.z_star), 0, atol=1e-6)


def test_infeasible_reported_by_status():
    p = QpProblem(np.eye(1), [0], [[1.0], [1.0]], [1.0, -np.inf], [np.inf, 0.0])
    assert qp_solve(p).status is QpStatus.PRIMAL_INFEASIBLE


def test_unbounded_reported_by_status():
    p = QpProblem(np.zeros((1, 1)), [1.0], np.zeros((0, 1)), [], [])
    assert qp_solve(p).status is QpStatus.DUAL_INFEASIBLE


def test_nonconvex_rejected():
    with pytest.raises(NonConvex):
        qp_solve(QpProblem([[-1.0]], [0.0], np.zeros((0, 1)), [], []))


def test_shape_errors():
    with pytest.raises(DimensionMismatch):
        QpProblem(np.eye(2), [0.0], np.zeros((0, 1)), [], [])
    with pytest.raises(ValueError):
        QpProblem(np.eye(1), [0.0], [[1.0]], [1.0], [0.0])


def test_iteration_cap():
    p = QpProblem(np.diag([1.0, 1e-4]), [1.0, -1.0], [[1.0, 1.0], [1.0, -1.0]], [-1, -2], [1, 0.3])
    sol = qp_solve(p, QpSettings(max_iter=1, polish=False, method="admm"))
    assert sol.status is QpStatus.MAX_ITERATIONS


@pytest.mark.parametrize("method", ["auto", "admm"])
def test_methods_agree_with_oracle(method, rng):
    P0 = rng.normal(size=(5, 5))
    P = P0 @ P0.T + 0.1 * np.eye(5)
    q = rng.normal(size=5)
    A = rng.normal(size=(4, 5))
    lo, hi = -0.3 * np.ones(4), 0.2 * np.ones(4)
    best, _ = enumerate_active_sets(P, q, A, lo, hi)
    sol = qp_solve(QpProblem(P, q, A, lo, hi), QpSettings(method=method))
    assert sol.objective == pytest.approx(best, abs=1e-6)


def test_least_squares_examples():
    np.testing.assert_allclose(least_squares_solve(np.eye(2), [3, 4]), [3, 4])
    np.testing.assert_allclose(least_squares_solve([[1.0], [1.0]], [1, 3]), [2])
    np.testing.assert_allclose(least_squares_solve([[1.0, 1.0]], [2]), [1, 1])
    np.testing.assert_allclose(least_squares_solve([[1.0, 1.0]], [2]), pseudoinverse_solution([[1, 1]], [2]))


def test_rank_examples():
    assert rank_of(np.eye(3)) == 3
    assert rank_of(np.zeros((2, 2))) == 0
    assert rank_of([[1, 2], [2, 4]]) == 1 == elimination_rank([[1, 2], [2, 4]])
    with pytest.raises(ValueError):
        rank_of(np.eye(2), tol=0)


def _random_qp(seed, n, m):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(n, n))
    P = M @ M.T + 0.05 * np.eye(n)
    q = rng.normal(size=n)
    A = rng.normal(size=(m, n))
    x_feas = rng.normal(size=n) * 0.1
    c = A @ x_feas
    lo = c - rng.uniform(0.0, 1.0, m)
    hi = c + rng.uniform(0.0, 1.0, m)
    return P, q, A, lo, hi


@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(0, 5))
def test_local_optimality(seed, n, m):
    P, q, A, lo, hi = _random_qp(seed, n, m)
    sol = qp_solve(QpProblem(P, q, A, lo, hi))
    assert sol.optimal
    z = sol.z_star
    Az = A @ z
    assert np.all(Az >= lo - 1e-6) and np.all(Az <= hi + 1e-6)
    # no feasible descent along random small perturbations
    rng = np.random.default_rng(seed + 1)
    f0 = sol.objective
    for _ in range(20):
        d = rng.normal(size=n) * 1e-3
        zt = z + d
        Azt = A @ zt
        if np.all(Azt >= lo) and np.all(Azt <= hi):
            assert 0.5 * zt @ P @ zt + q @ zt >= f0 - 1e-7


@given(st.integers(0, 10_000), st.integers(2, 8))
def test_equality_only_matches_kkt(seed, n):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(n, n))
    P = M @ M.T + 0.1 * np.eye(n)
    q = rng.normal(size=n)
    k = int(rng.integers(1, n))
    A = rng.normal(size=(k, n))
    b = rng.normal(size=k)
    sol = qp_solve(QpProblem(P, q, A, b, b))
    np.testing.assert_allclose(sol.z_star, equality_kkt(P, q, A, b), atol=1e-6)


@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 6))
def test_rank_invariance(seed, r, c):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(0, min(r, c) + 1))
    A = rng.normal(size=(r, k)) @ rng.normal(size=(k, c))
    Q1, _ = np.linalg.qr(rng.normal(size=(r, r)))
    Q2, _ = np.linalg.qr(rng.normal(size=(c, c)))
    assert rank_of(A) == k
    assert rank_of(Q1 @ A @ Q2) == k
    assert rank_of(A.T) == k
    assert rank_of(3.7 * A) == k
