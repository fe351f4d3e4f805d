import time

import numpy as np
import pytest
import scipy.sparse

from lqr_lab.conic import (
    Cone,
    ConicBuilder,
    ConicProblem,
    ConicSolver,
    Expr,
    SolverSettings,
    hinf_lmi_block,
    project_psd,
    project_soc,
    smat,
    solve_conic,
    spectral_norm_constraint,
    svec,
)
from lqr_lab.exceptions import ConfigError
from lqr_lab.sls import hinf_norm

TOL = 1e-8


def solve(builder, tol=TOL, max_iters=200_000):
    return solve_conic(builder.build(), tol=tol, max_iters=max_iters)


def minimal_norm_bound(V):
    """Smallest c with [[cI, V], [V', cI]] >= 0 found by the solver."""
    builder = ConicBuilder()
    c = builder.variable(1)
    spectral_norm_constraint(builder, V, c)
    builder.minimize(c)
    sol = solve(builder)
    assert sol.optimal
    return float(c.value(sol.x)[0, 0])


def minimal_hinf_level(taps):
    builder = ConicBuilder()
    g = builder.variable(1)
    hinf_lmi_block(builder, taps, gamma_sq=g)
    builder.minimize(g)
    sol = solve(builder)
    assert sol.optimal
    return float(np.sqrt(max(g.value(sol.x)[0, 0], 0.0)))


# Test cases for svec() and the cone projections
def test_svec_preserves_inner_product(rng):
    X, Y = rng.standard_normal((2, 4, 4))
    X, Y = X + X.T, Y + Y.T
    assert svec(X) @ svec(Y) == pytest.approx(np.trace(X @ Y))
    np.testing.assert_allclose(smat(svec(X), 4), X)


def test_psd_projection_clips_negative_eigenvalues():
    X = np.diag([2.0, -1.0])
    np.testing.assert_allclose(smat(project_psd(svec(X), 2), 2), np.diag([2.0, 0.0]), atol=1e-12)


def test_soc_projection():
    np.testing.assert_allclose(project_soc(np.array([5.0, 3.0, 4.0])), [5.0, 3.0, 4.0])
    np.testing.assert_allclose(project_soc(np.array([-5.0, 3.0, 4.0])), [0.0, 0.0, 0.0])
    np.testing.assert_allclose(project_soc(np.array([0.0, 3.0, 4.0])), [2.5, 1.5, 2.0])


def test_cone_validation():
    with pytest.raises(ValueError, match="Unknown cone"):
        Cone('exp', 3)
    assert Cone('psd', 3).rows == 6


# Test cases for solve_conic()
def test_linear_program_lower_bound():
    builder = ConicBuilder()
    x = builder.variable(1)
    builder.nonneg(x - 1.0)
    builder.minimize(x)
    sol = solve(builder)
    assert sol.optimal
    assert x.value(sol.x)[0, 0] == pytest.approx(1.0, abs=1e-6)


def test_second_order_cone_pythagoras():
    builder = ConicBuilder()
    v = builder.variable(2)
    t = builder.variable(1)
    builder.equal(v, np.array([[3.0], [4.0]]))
    builder.soc(t, v)
    builder.minimize(t)
    sol = solve(builder)
    assert sol.optimal
    assert t.value(sol.x)[0, 0] == pytest.approx(5.0, abs=1e-6)


def test_sdp_recovers_largest_eigenvalue(rng):
    C = rng.standard_normal((4, 4))
    C = 0.5 * (C + C.T)
    builder = ConicBuilder()
    X = builder.symmetric(4)
    builder.psd(X)
    builder.equal(sum(X[i:i + 1, i:i + 1] for i in range(4)), 1.0)
    CX = C @ X
    builder.minimize(-sum(CX[i:i + 1, i:i + 1] for i in range(4)))
    sol = solve(builder)
    assert sol.optimal
    assert -sol.objective == pytest.approx(np.max(np.linalg.eigvalsh(C)), abs=1e-6)
    assert np.min(np.linalg.eigvalsh(X.value(sol.x))) >= -1e-6


def test_optimal_solution_meets_tolerances(rng):
    C = rng.standard_normal((3, 3))
    builder = ConicBuilder()
    X = builder.symmetric(3)
    builder.psd(X)
    builder.equal(sum(X[i:i + 1, i:i + 1] for i in range(3)), 1.0)
    builder.minimize(sum((0.5 * (C + C.T) @ X)[i:i + 1, i:i + 1] for i in range(3)))
    sol = solve(builder, tol=1e-7)
    assert sol.optimal
    assert max(sol.primal_residual, sol.dual_residual, sol.gap) <= 1e-7
    assert sol.objective >= sol.dual_objective - 1e-5


def test_objective_scaling_keeps_minimizer():
    def argmin(scale):
        builder = ConicBuilder()
        x = builder.variable(2)
        t = builder.variable(1)
        builder.soc(t, x - np.array([[1.0], [2.0]]))
        builder.nonneg(Expr.constant(1.0) - x[0:1, :] - x[1:2, :])
        builder.minimize(t * scale)
        return x.value(solve(builder).x)

    np.testing.assert_allclose(argmin(1.0), argmin(10.0), atol=1e-5)


def test_infeasible_problem_is_not_optimal():
    builder = ConicBuilder()
    x = builder.variable(1)
    builder.nonneg(x - 2.0)
    builder.nonneg(1.0 - x)
    builder.minimize(x)
    sol = solve(builder, max_iters=20_000)
    assert not sol.optimal


def test_solver_warm_start_and_data_update():
    builder = ConicBuilder()
    x = builder.variable(1)
    builder.nonneg(x - 1.0)
    builder.minimize(x)
    prob = builder.build()
    solver = ConicSolver(prob, SolverSettings(tol=TOL))
    first = solver.solve()
    b = prob.b.copy()
    b[0] = -3.0
    solver.update_data(b=b)
    second = solver.solve(warm_start=(first.x, first.y, first.s))
    assert second.optimal
    assert second.x[0] == pytest.approx(3.0, abs=1e-6)


def test_large_right_hand_side_is_normalized():
    builder = ConicBuilder()
    x = builder.variable(2)
    builder.nonneg(x - np.array([[1e4], [2e-3]]))
    builder.minimize(np.ones((1, 2)) @ x)
    sol = solve(builder, tol=1e-9)
    assert sol.optimal
    value = x.value(sol.x).ravel()
    assert value[0] == pytest.approx(1e4, rel=1e-8)
    assert value[1] == pytest.approx(2e-3, abs=1e-4)


def test_constraint_matrix_is_factored_once():
    builder = ConicBuilder()
    x = builder.variable(3)
    builder.nonneg(x - 1.0)
    builder.minimize(np.ones((1, 3)) @ x)
    solver = ConicSolver(builder.build(), SolverSettings(tol=TOL))
    factor = solver._lu
    first = solver.solve()
    solver.update_data(c=np.array([1.0, 2.0, 3.0]))
    second = solver.solve(warm_start=(first.x, first.y, first.s))
    assert solver._lu is factor
    assert scipy.sparse.issparse(solver.A)
    assert second.optimal
    np.testing.assert_allclose(second.x, [1.0, 1.0, 1.0], atol=1e-6)


def test_problem_dump_and_load(tmp_path):
    builder = ConicBuilder()
    v = builder.variable(2)
    t = builder.variable(1)
    builder.equal(v, np.array([[3.0], [4.0]]))
    builder.soc(t, v)
    builder.minimize(t)
    prob = builder.build()
    path = tmp_path / 'problem.txt'
    prob.dump(path)
    loaded = ConicProblem.load(path)
    np.testing.assert_array_equal(loaded.A, prob.A)
    np.testing.assert_array_equal(loaded.b, prob.b)
    np.testing.assert_array_equal(loaded.c, prob.c)
    assert loaded.cones == prob.cones


def test_dense_limit():
    with pytest.raises(ConfigError, match="dense solver limit"):
        ConicProblem(np.zeros(6000), np.zeros((1, 6000)), np.zeros(1), [Cone('zero', 1)])


# Test cases for spectral_norm_constraint()
def test_spectral_norm_bound_matches_svd(rng):
    V = rng.standard_normal((3, 3))
    assert minimal_norm_bound(V) == pytest.approx(np.linalg.norm(V, 2), abs=1e-5)


def test_spectral_norm_bound_of_diagonal():
    assert minimal_norm_bound(np.diag([2.0, 0.5])) == pytest.approx(2.0, abs=1e-6)


def test_spectral_norm_rejects_negative_bound():
    with pytest.raises(ValueError):
        spectral_norm_constraint(ConicBuilder(), np.eye(2), -1.0)


# Test cases for hinf_lmi_block()
def test_hinf_single_tap():
    assert minimal_hinf_level([0.0, 0.7]) == pytest.approx(0.7, abs=1e-5)


def test_hinf_two_equal_taps():
    assert minimal_hinf_level([1.0, 1.0]) == pytest.approx(2.0, abs=1e-5)


def test_hinf_matrix_filter_matches_grid(rng):
    taps = rng.standard_normal((5, 2, 2))
    assert minimal_hinf_level(list(taps)) == pytest.approx(hinf_norm(taps, 8192), abs=1e-4)


@pytest.mark.slow
def test_hinf_level_at_synthesis_scale(rng):
    # thirteen 3 x 6 taps give the multiplier and LMI sizes of the F = 12 synthesis
    taps = 0.7 ** np.arange(13)[:, None, None] * rng.standard_normal((13, 3, 6))
    builder = ConicBuilder()
    g = builder.variable(1)
    hinf_lmi_block(builder, list(taps), gamma_sq=g)
    builder.minimize(g)
    started = time.perf_counter()
    sol = solve(builder, tol=1e-6, max_iters=20_000)
    assert time.perf_counter() - started < 60.0
    assert sol.optimal
    level = np.sqrt(max(g.value(sol.x)[0, 0], 0.0))
    assert level == pytest.approx(hinf_norm(taps, 8192), rel=1e-3)


def test_hinf_needs_exactly_one_level():
    with pytest.raises(ValueError, match="exactly one"):
        hinf_lmi_block(ConicBuilder(), [1.0], gamma=1.0, gamma_sq=Expr.constant(1.0))
