import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given
from numpy.testing import assert_allclose

from conftest import family_configs, potentials
from nested_transport.geometry import GridSpec, SquaredDistanceCost, TargetSet, build_density
from nested_transport.laguerre import LaguerreEngine
from nested_transport.numerics import (
    EPS_CBRT,
    LinearStepConfig,
    NumericsError,
    ScalarRootConfig,
    fd_jacobian,
    restricted_newton,
    restricted_solve,
    scalar_root,
)
from nested_transport.solvers.congestion import softmin_weights

DENSITY = build_density(GridSpec(resolution=48), "product_xy")


def test_eps_cbrt():
    assert EPS_CBRT == pytest.approx(6.055e-6, rel=1e-3)


def test_fd_jacobian_of_linear_map():
    A = np.array([[2.0, -1.0], [0.5, 3.0]])
    J = fd_jacobian(lambda v: A @ v, np.array([0.3, -0.2]))
    assert_allclose(J, A, atol=1e-8)


def test_fd_jacobian_with_executor_matches_serial():
    fn = lambda v: np.array([v[0] ** 2 + v[1], np.sin(v[1])])
    v = np.array([0.4, 0.9])
    with ThreadPoolExecutor(max_workers=2) as pool:
        parallel = fd_jacobian(fn, v, executor=pool)
    assert np.array_equal(parallel, fd_jacobian(fn, v))


def test_fd_jacobian_rejects_nonfinite_residuals():
    with pytest.raises(NumericsError):
        fd_jacobian(lambda v: np.full(2, np.nan), np.zeros(2))


def test_step_rule_scales_with_magnitude():
    rule = LinearStepConfig(relative_step=1e-3)
    assert_allclose(rule.step(np.array([0.0, -3.0])), [1e-3, 4e-3])


@given(config=family_configs(n_values=(2, 3, 4)), data=potentials(4, scale=0.2))
def test_fd_jacobian_kernel_contains_ones(config, data):
    family, n = config
    engine = LaguerreEngine(DENSITY, SquaredDistanceCost(), TargetSet.from_family(family, n))
    residual = lambda v: engine.masses(v) - softmin_weights(v)
    J = fd_jacobian(residual, data[:n])
    scale = max(float(np.abs(J).max()), 1e-12)
    # G(v + t 1) = G(v): rows sum to zero; sum_i G_i = 0: columns sum to zero.
    assert np.abs(J.sum(axis=1)).max() <= 2e-2 * scale
    assert np.abs(J.sum(axis=0)).max() <= 1e-6 * scale + 1e-9


def test_restricted_solve_projects_out_ones():
    # Graph Laplacian: kernel is exactly the all-ones vector.
    L = np.array([[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]])
    rhs = np.array([1.0, 0.0, -1.0])
    s = restricted_solve(L, rhs)
    assert abs(s.sum()) < 1e-12
    assert_allclose(L @ s, rhs, atol=1e-12)


def test_restricted_solve_single_unknown():
    assert_allclose(restricted_solve(np.array([[0.0]]), np.array([1.0])), [0.0])


def test_restricted_solve_rejects_extra_kernel():
    J = np.zeros((3, 3))
    with pytest.raises(NumericsError):
        restricted_solve(J, np.ones(3))


def test_restricted_solve_shape_mismatch():
    with pytest.raises(ValueError):
        restricted_solve(np.eye(2), np.ones(3))


def test_scalar_root_bisection():
    result = scalar_root(lambda x: 0.3 - x, ScalarRootConfig(bracket=(0.0, 1.0), tol_x=1e-12))
    assert result.converged
    assert result.root == pytest.approx(0.3, abs=1e-11)


def test_scalar_root_without_sign_change():
    with pytest.raises(NumericsError):
        scalar_root(lambda x: 1.0 + x, ScalarRootConfig(bracket=(0.0, 1.0)))


def test_scalar_root_bracket_must_be_increasing():
    with pytest.raises(ValueError):
        ScalarRootConfig(bracket=(1.0, 0.0))


def test_infeasible_side_counts_as_negative():
    f = lambda x: 1.0 - x if x < 0.5 else None
    result = scalar_root(f, ScalarRootConfig(bracket=(0.0, 1.0), tol_x=1e-10))
    assert result.root == pytest.approx(0.5, abs=1e-9)


def test_safeguarded_newton_beats_bisection():
    f = lambda x: 2.0 - x ** 3
    bisect = scalar_root(f, ScalarRootConfig(bracket=(0.0, 2.0), tol_x=1e-12))
    newton = scalar_root(f, ScalarRootConfig(bracket=(0.0, 2.0), tol_x=1e-12, mode="safeguarded_newton",
                                             x0=1.0))
    assert newton.converged
    assert newton.root == pytest.approx(2.0 ** (1.0 / 3.0), abs=1e-9)
    assert newton.iterations < bisect.iterations


def test_halve_policy_retreats_to_feasible_points():
    # From x0 = 0.2 the first Newton trial is 0.6, past the feasible edge at 0.5.
    f = lambda x: None if x > 0.5 else 0.2 - x * x
    result = scalar_root(f, ScalarRootConfig(bracket=(0.0, 1.0), tol_x=1e-12, mode="safeguarded_newton",
                                             infeasible_policy="halve", x0=0.2))
    assert result.root == pytest.approx(math.sqrt(0.2), abs=1e-9)


def test_restricted_newton_solves_shift_invariant_system():
    target = np.array([0.2, 0.3, 0.5])
    residual = lambda v: softmin_weights(v) - target
    outcome = restricted_newton(residual, np.zeros(3), tol=1e-12, maxit=30)
    assert outcome.converged
    assert_allclose(softmin_weights(outcome.v), target, atol=1e-10)
    assert outcome.history[-1] <= 1e-12


def test_restricted_newton_reports_nonfinite_start():
    outcome = restricted_newton(lambda v: np.full(2, np.nan), np.zeros(2), tol=1e-8, maxit=5)
    assert not outcome.converged
    assert "Non-finite" in outcome.message


def test_restricted_newton_damping_cap():
    residual = lambda v: softmin_weights(v) - np.array([0.2, 0.8])
    outcome = restricted_newton(residual, np.zeros(2), tol=1e-12, maxit=5, accept=lambda trial: False,
                                damping_cap=3)
    assert outcome.rejected
    assert not outcome.converged
    assert outcome.damping_steps == 3
    assert math.isfinite(outcome.history[0])
