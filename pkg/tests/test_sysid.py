import numpy as np
import pytest

from lqr_lab.exceptions import Degenerate, MissingTruth
from lqr_lab.linsys import LinearSystem, StateSpaceController, Trajectory, dare_solve, simulate_rollout
from lqr_lab.sysid import (
    ConfidenceEllipsoid,
    ParamEstimate,
    RLSState,
    ellipsoid_radius,
    error_schedule,
    gram_matrix,
    ols_estimate,
    rls_extend,
    rls_update,
    theoretical_constants,
    theoretical_error,
)


# Fixtures for identification data
@pytest.fixture
def excited_trajectory(laplacian):
    controller = StateSpaceController.static(dare_solve(laplacian).K)
    return simulate_rollout(laplacian, controller, 200, eta_std=1.0, rng_seed=5)


def open_loop_trajectory(A, B, inputs, x0=None):
    n = A.shape[0]
    T = inputs.shape[0]
    states = np.zeros((T + 1, n))
    if x0 is not None:
        states[0] = x0
    for k in range(T):
        states[k + 1] = A @ states[k] + B @ inputs[k]
    return Trajectory(states, inputs, np.zeros((T, n)), np.zeros_like(inputs))


# Test cases for ols_estimate()
def test_ols_recovers_noiseless_system(laplacian, rng):
    traj = open_loop_trajectory(laplacian.A, laplacian.B, rng.standard_normal((50, 3)))
    est = ols_estimate(traj)
    assert np.max(np.abs(est.A_hat - laplacian.A)) <= 1e-8
    assert np.max(np.abs(est.B_hat - laplacian.B)) <= 1e-8
    assert est.samples == 50


def test_ols_zero_input_is_degenerate():
    traj = open_loop_trajectory(np.zeros((2, 2)), np.eye(2), np.zeros((20, 2)), x0=np.ones(2))
    with pytest.raises(Degenerate):
        ols_estimate(traj)


def test_ols_too_few_samples_is_degenerate(laplacian, rng):
    traj = open_loop_trajectory(laplacian.A, laplacian.B, rng.standard_normal((4, 3)))
    with pytest.raises(Degenerate, match="cannot identify"):
        ols_estimate(traj)


def test_ols_satisfies_normal_equations(excited_trajectory):
    est = ols_estimate(excited_trajectory)
    Z = np.hstack([excited_trajectory.states[:-1], excited_trajectory.inputs])
    residual = excited_trajectory.states[1:] - Z @ est.theta.T
    scale = np.linalg.norm(Z) * np.linalg.norm(excited_trajectory.states[1:])
    assert np.linalg.norm(residual.T @ Z) <= 1e-8 * scale


def test_ols_fills_error_radii(excited_trajectory, laplacian):
    est = ols_estimate(excited_trajectory, policy='actual', truth=laplacian)
    assert est.eps_A == pytest.approx(np.linalg.norm(est.A_hat - laplacian.A, 2))
    assert est.eps_B == pytest.approx(np.linalg.norm(est.B_hat - laplacian.B, 2))


# Test cases for rls_update()
def test_rls_without_data_keeps_initialization():
    state = RLSState.initial(2, 1, 1e-5)
    np.testing.assert_array_equal(state.estimate().theta, np.zeros((2, 3)))


def test_rls_matches_batch_ridge(excited_trajectory):
    lam = 1e-5
    state = rls_extend(RLSState.initial(3, 3, lam), excited_trajectory)
    batch = ols_estimate(excited_trajectory, lam)
    np.testing.assert_allclose(state.theta, batch.theta, atol=1e-7)
    np.testing.assert_allclose(state.Z, gram_matrix(excited_trajectory, lam), rtol=1e-12, atol=1e-9)
    sign, logdet = np.linalg.slogdet(state.Z)
    assert sign > 0
    assert state.logdet == pytest.approx(logdet, abs=1e-6)


def test_rls_update_is_not_idempotent():
    state = RLSState.initial(1, 1, 1.0)
    once = rls_update(state, [1.0], [0.0], [0.5])
    twice = rls_update(once, [1.0], [0.0], [0.5])
    assert twice.Z[0, 0] == once.Z[0, 0] + 1.0


def test_rls_requires_positive_regularization():
    with pytest.raises(ValueError):
        RLSState.initial(2, 2, 0.0)


# Test cases for gram_matrix()
def test_gram_matrix_of_empty_trajectory():
    np.testing.assert_array_equal(gram_matrix(Trajectory.empty(2, 1), 1.0), np.eye(3))


def test_gram_matrix_single_sample():
    traj = Trajectory(np.array([[1.0, 0.0], [0.0, 0.0]]), np.zeros((1, 1)), np.zeros((1, 2)), np.zeros((1, 1)))
    expected = np.zeros((3, 3))
    expected[0, 0] = 1.0
    np.testing.assert_array_equal(gram_matrix(traj, 0.0), expected)


def test_gram_matrix_is_monotone(excited_trajectory):
    short = Trajectory(excited_trajectory.states[:101], excited_trajectory.inputs[:100],
                       excited_trajectory.process_noise[:100], excited_trajectory.exploration_noise[:100])
    gap = gram_matrix(excited_trajectory, 1e-5) - gram_matrix(short, 1e-5)
    assert np.min(np.linalg.eigvalsh(gap)) >= -1e-9


# Test cases for error_schedule()
def test_actual_errors_vanish_at_truth(laplacian):
    est = ParamEstimate(laplacian.A.copy(), laplacian.B.copy())
    assert error_schedule('actual', laplacian, est) == (0.0, 0.0)


def test_scaled_errors_multiply_actual(excited_trajectory, laplacian):
    est = ols_estimate(excited_trajectory)
    actual = error_schedule('actual', laplacian, est)
    scaled = error_schedule('scaled', laplacian, est, 2.0)
    assert scaled == (2 * actual[0], 2 * actual[1])


def test_actual_errors_need_truth(excited_trajectory):
    with pytest.raises(MissingTruth):
        error_schedule('actual', None, ols_estimate(excited_trajectory))


def test_unknown_error_policy(excited_trajectory, laplacian):
    with pytest.raises(ValueError, match="Unknown error policy"):
        error_schedule('oracle', laplacian, ols_estimate(excited_trajectory))


def test_theoretical_errors_shrink_with_data(laplacian):
    constants = theoretical_constants(laplacian)
    early = theoretical_error(constants, 3, 3, 100, 0.1)
    late = theoretical_error(constants, 3, 3, 400, 0.1)
    assert late == pytest.approx(early / 2)
    assert theoretical_error(constants, 3, 3, 100, 0.0) == float('inf')


# Test cases for ConfidenceEllipsoid
def test_truth_lies_on_boundary_of_actual_ellipsoid(excited_trajectory, laplacian):
    state = rls_extend(RLSState.initial(3, 3, 1e-5), excited_trajectory)
    theta_star = np.hstack([laplacian.A, laplacian.B])
    eps = ellipsoid_radius(state.theta, theta_star, state.Z)
    ell = state.ellipsoid(eps)
    assert ell.value(theta_star) == pytest.approx(eps, rel=1e-10)
    assert ell.contains(theta_star)
    assert ell.contains(state.theta)


def test_multiplier_stretches_ellipsoid_axes(excited_trajectory, laplacian):
    state = rls_extend(RLSState.initial(3, 3, 1e-5), excited_trajectory)
    theta_star = np.hstack([laplacian.A, laplacian.B])
    base = ellipsoid_radius(state.theta, theta_star, state.Z)
    eps = ellipsoid_radius(state.theta, theta_star, state.Z, multiplier=5.0)
    assert eps == pytest.approx(25.0 * base)
    stretched = state.theta + 5.0 * (theta_star - state.theta)
    assert state.ellipsoid(eps).value(stretched) == pytest.approx(eps, rel=1e-10)


def test_ellipsoid_rejects_singular_Z():
    with pytest.raises(ValueError, match="positive definite"):
        ConfidenceEllipsoid(np.zeros((1, 2)), np.diag([1.0, 0.0]), 1.0)


def test_theoretical_constants_need_stabilizable_system():
    sys = LinearSystem([[2.0]], [[0.0]], [[1.0]], [[1.0]])
    with pytest.raises(ValueError, match="stabilizable"):
        theoretical_constants(sys)
