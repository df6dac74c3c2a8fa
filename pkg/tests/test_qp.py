import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import enumerate_min_2d, grid_min_2d, random_feasible_qp
from taxicbf.control.qp import QpProblem, solve_qp
from taxicbf.errors import QpInfeasibleError, ValidationError


def test_unconstrained_minimizer():
    H = np.array([[4.0, 1.0], [1.0, 3.0]])
    f = np.array([1.0, -2.0])
    r = solve_qp(QpProblem(H, f))
    assert np.allclose(r.z, -np.linalg.solve(H, f), atol=1e-12)
    assert r.kkt_residual <= 1e-8


def test_projection_onto_violated_halfspace():
    z0 = np.array([3.0, -1.0, 2.0])
    a = np.array([1.0, 2.0, -2.0])
    beta = 5.0
    r = solve_qp(QpProblem(np.eye(3), -z0, a[None, :], [beta]))
    expected = z0 + (beta - a @ z0) / (a @ a) * a
    assert np.allclose(r.z, expected, atol=1e-12)
    assert r.active == [("row", 0)]
    assert r.multipliers[0] == pytest.approx((beta - a @ z0) / (a @ a))


def test_satisfied_halfspace_is_inactive():
    z0 = np.array([3.0, 1.0])
    r = solve_qp(QpProblem(np.eye(2), -z0, [[1.0, 0.0]], [0.0]))
    assert np.array_equal(r.z, z0) and r.active == []


def test_box_projection():
    z0 = np.array([5.0, -7.0, 0.5])
    r = solve_qp(QpProblem(np.eye(3), -z0, lb=-np.ones(3), ub=np.ones(3)))
    assert np.allclose(r.z, np.clip(z0, -1, 1), atol=1e-12)


def test_infeasible_reports_conflict():
    qp = QpProblem(np.eye(2), np.zeros(2), [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]], [2.0, -1.0, -5.0])
    with pytest.raises(QpInfeasibleError) as exc:
        solve_qp(qp)
    assert set(exc.value.conflicting_rows) == {("row", 0), ("row", 1)}


def test_infeasible_against_bound():
    qp = QpProblem(np.eye(1), np.zeros(1), [[1.0]], [3.0], lb=[0.0], ub=[2.0])
    with pytest.raises(QpInfeasibleError) as exc:
        solve_qp(qp)
    assert ("row", 0) in exc.value.conflicting_rows and ("ub", 0) in exc.value.conflicting_rows


def test_bad_problems():
    with pytest.raises(ValidationError):
        QpProblem(np.array([[1.0, 2.0], [0.0, 1.0]]), np.zeros(2))
    with pytest.raises(QpInfeasibleError):
        QpProblem(np.eye(1), np.zeros(1), lb=[1.0], ub=[0.0])
    with pytest.raises(ValidationError):
        QpProblem(np.diag([1.0, -1.0]), np.zeros(2)).check_convex()


def test_warm_start_gives_same_answer():
    rng = np.random.default_rng(4)
    for _ in range(20):
        H, f, A, b, lb, ub = random_feasible_qp(rng, 4, 5)
        qp = QpProblem(H, f, A, b, lb, ub)
        cold = solve_qp(qp).z
        warm = solve_qp(qp, z0=rng.normal(size=4)).z
        assert np.allclose(cold, warm, atol=1e-9)


@pytest.mark.parametrize("seed", range(25))
def test_two_variable_grid_oracle(seed):
    rng = np.random.default_rng(seed)
    H, f, A, b, lb, ub = random_feasible_qp(rng, 2, int(rng.integers(0, 5)))
    r = solve_qp(QpProblem(H, f, A, b, lb, ub))
    # never worse than any feasible grid point, and equal to the exact active-set enumeration
    grid, _ = grid_min_2d(H, f, A, b, lb, ub)
    assert r.objective <= grid + 1e-6
    assert abs(r.objective - enumerate_min_2d(H, f, A, b, lb, ub)) <= 1e-6
    assert r.kkt_residual <= 1e-8


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(1, 8), m=st.integers(0, 10))
def test_kkt_conditions_random(seed, n, m):
    rng = np.random.default_rng(seed)
    H, f, A, b, lb, ub = random_feasible_qp(rng, n, m)
    qp = QpProblem(H, f, A, b, lb, ub)
    r = solve_qp(qp)
    assert r.kkt_residual <= 1e-8
    assert np.all(A @ r.z >= b - 1e-9) and np.all(r.z >= lb - 1e-12) and np.all(r.z <= ub + 1e-12)
    # no feasible random perturbation does better
    for _ in range(20):
        z = r.z + rng.normal(scale=1e-3, size=n)
        if np.all(A @ z >= b) and np.all((z >= lb) & (z <= ub)):
            assert qp.objective(z) >= r.objective - 1e-12
