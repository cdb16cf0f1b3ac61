import numpy as np
import pytest

from hddpc.ddpc import (
    DdpcConfig,
    LtiSystem,
    ddpc_assemble,
    ddpc_plan,
    lti_state_after,
    random_lti,
    simulate_lti,
)
from hddpc.errors import ShapeMismatch, SolverFailed
from hddpc.hankel import HankelMatrix, PartitionSpec, build_sliding_matrix, partition
from hddpc.qpsolver import SolverSettings

from oracles import lti_rollout


def lti_case(seed, beta=3, k=2, N=8):
    """Exact data from a random system plus a fresh initial window."""
    rng = np.random.default_rng(seed)
    sys = random_lti(rng, beta, k, k)
    T_ini = beta
    L = T_ini + N
    u = rng.standard_normal(((k + 1) * (L + beta) + 20, k))
    y = simulate_lti(sys, rng.standard_normal(beta), u)
    parts = partition(build_sliding_matrix(u, L), build_sliding_matrix(y, L), PartitionSpec(T_ini, N))
    x0 = rng.standard_normal(beta)
    ui = rng.standard_normal((T_ini, k))
    yi = simulate_lti(sys, x0, ui)
    return sys, parts, (ui, yi), lti_state_after(sys, x0, ui), rng


def test_simulate_examples():
    sys = LtiSystem(np.eye(2), np.eye(2), np.eye(2), np.zeros((2, 2)))
    np.testing.assert_array_equal(simulate_lti(sys, np.zeros(2), np.zeros((4, 2))), 0.0)
    Y = simulate_lti(sys, np.zeros(2), [[1.0, 0.0]] * 4)
    np.testing.assert_array_equal(Y[:, 0], [0, 1, 2, 3])
    with pytest.raises(ShapeMismatch):
        simulate_lti(sys, np.zeros(3), np.zeros((4, 2)))
    with pytest.raises(ShapeMismatch):
        LtiSystem(np.eye(2), np.eye(2), np.eye(2), np.zeros((3, 2)))


@pytest.mark.parametrize("seed", range(5))
def test_simulate_matches_recursion(seed):
    rng = np.random.default_rng(seed)
    sys = random_lti(rng, 4, 2, 2)
    x0, U = rng.standard_normal(4), rng.standard_normal((12, 2))
    Y_ref, _ = lti_rollout(sys.A, sys.B, sys.M, sys.D, x0, U)
    np.testing.assert_allclose(simulate_lti(sys, x0, U), Y_ref, atol=1e-13)


def test_variable_count():
    H_u = HankelMatrix(np.random.default_rng(0).standard_normal((100, 5)), 2, 50)
    parts = partition(H_u, H_u, PartitionSpec(4, 46))
    prob = ddpc_assemble(parts, (np.zeros(8), np.zeros(8)), (None, None), DdpcConfig(4, 46))
    assert prob.n == 389
    assert [prob.layout[k].stop - prob.layout[k].start for k in ("gamma", "sigma", "mu", "eta")] == [5, 200, 92, 92]


def test_zero_reference_zero_history():
    sys, parts, _, _, _ = lti_case(1)
    cfg = DdpcConfig(3, 8, Q=1.0, R=0.1)
    plan = ddpc_plan(ddpc_assemble(parts, (np.zeros(6), np.zeros(6)), (None, None), cfg))
    assert np.max(np.abs(plan.mu)) < 1e-8 and np.max(np.abs(plan.eta)) < 1e-8
    assert plan.solution.objective == pytest.approx(0.0, abs=1e-12)


def test_slack_vanishes_with_penalty():
    sys, parts, hist, _, rng = lti_case(2)
    ref = rng.standard_normal(16)
    norms = []
    for psi in (1e2, 1e4, 1e6):
        cfg = DdpcConfig(3, 8, Q=1.0, R=0.1, psi_gamma=0.0, psi_sigma=psi)
        norms.append(ddpc_plan(ddpc_assemble(parts, hist, (None, ref), cfg)).sigma_norm)
    assert norms[0] > norms[1] > norms[2]
    assert norms[2] < 1e-4


@pytest.mark.parametrize("seed", range(6))
def test_fundamental_lemma_exactness(seed):
    rng = np.random.default_rng(100 + seed)
    beta, k = int(rng.integers(1, 5)), int(rng.integers(1, 3))
    sys, parts, hist, xT, rng = lti_case(100 + seed, beta, k)
    cfg = DdpcConfig(beta, 8, Q=1.0, R=0.1, psi_gamma=0.0, psi_sigma=1e8)
    plan = ddpc_plan(ddpc_assemble(parts, hist, (None, 0.5 * rng.standard_normal(8 * k)), cfg))
    expected = simulate_lti(sys, xT, plan.mu.reshape(8, k)).reshape(-1)
    assert np.max(np.abs(plan.eta - expected)) <= 1e-6


def test_contradictory_bounds_fail():
    _, parts, hist, _, _ = lti_case(3)
    cfg = DdpcConfig(3, 8, u_min=1.0, u_max=-1.0)
    with pytest.raises(SolverFailed):
        ddpc_plan(ddpc_assemble(parts, hist, (None, None), cfg))


def test_warm_start_same_solution_fewer_iterations():
    _, parts, hist, _, rng = lti_case(4)
    cfg = DdpcConfig(3, 8, Q=1.0, R=0.1, u_min=-0.5, u_max=0.5)
    prob = ddpc_assemble(parts, hist, (None, rng.standard_normal(16)), cfg)
    settings = SolverSettings(polish=False)
    cold = ddpc_plan(prob, settings)
    warm = ddpc_plan(prob, settings, warm_start=(cold.solution.x, cold.solution.y))
    np.testing.assert_allclose(warm.eta, cold.eta, atol=1e-5)
    assert warm.solution.iterations < cold.solution.iterations


def test_duplicate_column_leaves_plan():
    _, parts, hist, _, rng = lti_case(5)
    ref = rng.standard_normal(16)
    cfg = DdpcConfig(3, 8, Q=1.0, R=0.1, psi_gamma=0.0, psi_sigma=1e4)
    base = ddpc_plan(ddpc_assemble(parts, hist, (None, ref), cfg))
    dup = [np.column_stack([p.data, p.data[:, :1]]) for p in parts]
    again = ddpc_plan(ddpc_assemble(dup, hist, (None, ref), cfg))
    np.testing.assert_allclose(again.mu, base.mu, atol=1e-6)
    np.testing.assert_allclose(again.eta, base.eta, atol=1e-6)


def test_shape_checks():
    _, parts, hist, _, _ = lti_case(6)
    with pytest.raises(ShapeMismatch):
        ddpc_assemble(parts, (hist[0][:2], hist[1]), (None, None), DdpcConfig(3, 8))
    with pytest.raises(ShapeMismatch):
        ddpc_assemble(parts, hist, (None, np.zeros(3)), DdpcConfig(3, 8))
