import numpy as np
import pytest
import scipy.sparse as sp

from hddpc.errors import InvalidProblem
from hddpc.qpsolver import QpProblem, SolverSettings, Status, dual_objective, dump_problem, solve

from oracles import active_set_qp, enumerate_qp, random_qp


def test_active_bound():
    # min x^2 s.t. x >= 1
    prob = QpProblem(P=[[2.0]], q=[0.0], A=[[1.0]], l=[1.0], u=[np.inf])
    sol = solve(prob)
    assert sol.status is Status.SOLVED
    assert sol.x[0] == pytest.approx(1.0, abs=1e-8)


def test_equality_by_hand():
    # min (x-2)^2 + (y-1)^2 s.t. x + y = 1  ->  (1, 0)
    prob = QpProblem(P=2 * np.eye(2), q=[-4.0, -2.0], A=[[1.0, 1.0]], l=[1.0], u=[1.0])
    sol = solve(prob)
    assert sol.solved
    np.testing.assert_allclose(sol.x, [1.0, 0.0], atol=1e-8)


@pytest.mark.parametrize("seed", range(12))
def test_active_set_oracle_agrees_with_enumeration(seed):
    rng = np.random.default_rng(seed)
    P, q, A, l, u = random_qp(rng, n=int(rng.integers(2, 6)), m=int(rng.integers(1, 6)), n_eq=1)
    _, f_enum = enumerate_qp(P, q, A, l, u)
    _, f_as = active_set_qp(P, q, A, l, u)
    assert f_as == pytest.approx(f_enum, rel=1e-9, abs=1e-9)


@pytest.mark.parametrize("seed", range(25))
def test_matches_enumeration_small(seed):
    rng = np.random.default_rng(100 + seed)
    P, q, A, l, u = random_qp(rng, n=int(rng.integers(1, 6)), m=int(rng.integers(1, 7)))
    _, f_ref = enumerate_qp(P, q, A, l, u)
    sol = solve(QpProblem(P, q, A, l, u))
    assert sol.solved
    assert sol.objective == pytest.approx(f_ref, rel=1e-6, abs=1e-6)


def test_duality_gap_and_kkt():
    rng = np.random.default_rng(7)
    P, q, A, l, u = random_qp(rng, 12, 20, n_eq=2)
    prob = QpProblem(P, q, A, l, u)
    settings = SolverSettings()
    sol = solve(prob, settings)
    assert sol.solved
    gap = abs(sol.objective - dual_objective(prob, sol.x, sol.y))
    assert gap <= 1e-5 * (1 + abs(sol.objective))
    Ax = A @ sol.x
    assert np.all(Ax >= l - 1e-6) and np.all(Ax <= u + 1e-6)
    stationarity = P @ sol.x + q + A.T @ sol.y
    assert np.max(np.abs(stationarity)) <= settings.eps_abs + settings.eps_rel * max(
        np.abs(P @ sol.x).max(), np.abs(A.T @ sol.y).max(), np.abs(q).max()
    )


@pytest.mark.parametrize("scale", [1e-3, 0.5, 7.0, 1e3])
def test_objective_scaling_leaves_argmin(scale):
    rng = np.random.default_rng(3)
    P, q, A, l, u = random_qp(rng, 8, 10)
    base = solve(QpProblem(P, q, A, l, u))
    scaled = solve(QpProblem(scale * P, scale * q, A, l, u))
    np.testing.assert_allclose(scaled.x, base.x, atol=1e-6)


def test_singular_psd_cost():
    # Only x0 is penalized; x1 is pinned by its box.
    P = np.diag([2.0, 0.0])
    prob = QpProblem(P, [0.0, 1.0], np.eye(2), [-5.0, -1.0], [5.0, 1.0])
    sol = solve(prob)
    assert sol.solved
    np.testing.assert_allclose(sol.x, [0.0, -1.0], atol=1e-7)


def test_primal_infeasible_reported():
    prob = QpProblem(np.eye(1), [0.0], [[1.0], [1.0]], [1.0, -np.inf], [np.inf, 0.0])
    sol = solve(prob, SolverSettings(max_iter=5000))
    assert sol.status is Status.PRIMAL_INFEASIBLE


def test_contradictory_bounds_reported_without_iterating():
    prob = QpProblem(np.eye(1), [0.0], [[1.0]], [2.0], [1.0])
    sol = solve(prob)
    assert sol.status is Status.PRIMAL_INFEASIBLE
    assert sol.iterations == 0
    assert sol.primal_residual == pytest.approx(1.0)


def test_dual_infeasible_reported():
    # min -x with x unbounded above
    prob = QpProblem(sp.csc_matrix((1, 1)), [-1.0], [[1.0]], [0.0], [np.inf])
    sol = solve(prob, SolverSettings(max_iter=5000))
    assert sol.status is Status.DUAL_INFEASIBLE


def test_invalid_problems_rejected():
    with pytest.raises(InvalidProblem):
        QpProblem([[1.0, 2.0], [0.0, 1.0]], [0, 0], np.eye(2), [0, 0], [1, 1])
    with pytest.raises(InvalidProblem):
        QpProblem([[-1.0]], [0.0], [[1.0]], [0.0], [1.0])
    with pytest.raises(InvalidProblem):
        QpProblem(np.eye(2), [0.0], np.eye(2), [0, 0], [1, 1])


def test_deterministic_and_warm_start_is_faster():
    rng = np.random.default_rng(11)
    P, q, A, l, u = random_qp(rng, 15, 25, n_eq=3)
    prob = QpProblem(P, q, A, l, u)
    settings = SolverSettings(polish=False)
    a = solve(prob, settings)
    b = solve(prob, settings)
    assert a.iterations == b.iterations
    np.testing.assert_array_equal(a.x, b.x)
    warm = solve(prob, settings, warm_start=(a.x, a.y))
    assert warm.solved
    assert warm.iterations < a.iterations


def test_dump_problem(tmp_path):
    prob = QpProblem(np.eye(2), [1.0, 2.0], [[1.0, 1.0]], [0.0], [np.inf])
    dump_problem(prob, tmp_path / "qp")
    assert (tmp_path / "qp.P.mtx").exists()
    assert (tmp_path / "qp.A.mtx").exists()
    assert np.loadtxt(tmp_path / "qp.u.txt") == np.inf
