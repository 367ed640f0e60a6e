import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
import hypothesis.strategies as st
from numpy.testing import assert_allclose

from nested_transport.constants import reference_constant
from nested_transport.geometry import GridSpec, SquaredDistanceCost, TargetSet, build_density
from nested_transport.laguerre import LaguerreEngine, check_nested
from nested_transport.nest_analysis import certify_nested_apriori, entropy_weight_bounds
from nested_transport.problems import build_congestion
from nested_transport.schemas import RunConfig, SolveStatus
from nested_transport.solvers.congestion import (
    ENTROPY,
    InternalEnergy,
    c_search_bounds,
    error_func,
    nested_bisection,
    nested_newton,
    newton_damped,
    newton_standard,
    objective_value,
    residual_G,
    residual_H,
    splitting_start,
    theoretical_h,
)

COST = SquaredDistanceCost()
GRID = GridSpec(resolution=96)
UNIFORM = build_density(GRID, "uniform")
PRODUCT = build_density(GRID, "product_xy")
SMALL = GridSpec(resolution=32)
SMALL_DENSITIES = {"uniform": build_density(SMALL, "uniform"), "product_xy": build_density(SMALL, "product_xy")}


@pytest.fixture(scope="module")
def e1_solution():
    targets = TargetSet.from_family("E1", 3)
    return targets, nested_bisection(UNIFORM, COST, targets)


def test_single_target_has_zero_constant():
    report = nested_bisection(UNIFORM, COST, TargetSet.from_family("E1", 1))
    assert report.succeeded
    assert report.C == 0.0
    assert_allclose(report.masses, [1.0])


def test_error_of_single_target():
    ev = error_func(UNIFORM, COST, TargetSet.from_family("E1", 1), -0.5)
    assert ev.value == pytest.approx(1.0 - math.exp(-0.5))


def test_nested_bisection_reaches_reference(e1_solution):
    targets, report = e1_solution
    assert report.succeeded
    assert report.method == "nested-bisection"
    assert report.C == pytest.approx(reference_constant("uniform", "E1", 3), abs=5e-2)
    assert report.nested
    assert report.v[0] == 0.0
    assert math.fsum(report.masses) == pytest.approx(1.0, abs=1e-12)
    assert report.details["first_order_gap"] <= 1e-4


def test_stage_construction_stays_consistent(e1_solution):
    _, report = e1_solution
    assert report.details["nested_consistent"] == 1.0
    assert report.details["max_stage_drift"] <= 1e-6


def test_solution_zeroes_both_residual_forms(e1_solution):
    targets, report = e1_solution
    engine = LaguerreEngine(UNIFORM, COST, targets)
    assert np.abs(residual_H(UNIFORM, COST, targets, report.v, report.C, engine)).max() <= 1e-4
    assert np.abs(residual_G(UNIFORM, COST, targets, report.v, engine)).max() <= 1e-4


@pytest.mark.parametrize("solver", [newton_standard, newton_damped])
def test_newton_variants_agree_with_nested(e1_solution, solver):
    targets, nested = e1_solution
    report = solver(UNIFORM, COST, targets)
    assert report.succeeded
    assert report.C == pytest.approx(nested.C, abs=1e-3)
    assert_allclose(report.v, nested.v, atol=1e-3)
    assert report.iterations <= 6


def test_nested_newton_agrees_with_bisection(e1_solution):
    targets, nested = e1_solution
    report = nested_newton(UNIFORM, COST, targets)
    assert report.succeeded
    assert report.C == pytest.approx(nested.C, abs=1e-3)


def test_theoretical_error_agrees_with_sequential(e1_solution):
    targets, nested = e1_solution
    report = nested_bisection(UNIFORM, COST, targets, error="theoretical")
    assert report.method == "nested-theoretical"
    assert report.succeeded
    assert report.C == pytest.approx(nested.C, abs=1e-3)


def test_inner_newton_matches_inner_bisection(e1_solution):
    targets, nested = e1_solution
    report = nested_bisection(UNIFORM, COST, targets, inner="newton")
    assert report.succeeded
    assert report.C == pytest.approx(nested.C, abs=1e-4)


def test_unknown_error_function(e1_solution):
    targets, _ = e1_solution
    with pytest.raises(ValueError):
        nested_bisection(UNIFORM, COST, targets, error="exact")


def test_decreasing_interval_is_rejected(e1_solution):
    targets, _ = e1_solution
    with pytest.raises(ValueError):
        nested_bisection(UNIFORM, COST, targets, C_interval=(0.0, -5.0))


def test_initial_potentials_must_match_targets(e1_solution):
    targets, _ = e1_solution
    with pytest.raises(ValueError):
        newton_standard(UNIFORM, COST, targets, v0=np.zeros(2))


def test_infeasible_start_is_reported_not_raised(e1_solution):
    targets, _ = e1_solution
    report = nested_newton(UNIFORM, COST, targets, C0=-1e-3)
    assert report.status == SolveStatus.FAILED
    assert "infeasible" in report.message


def test_error_is_near_one_for_very_negative_C():
    targets = TargetSet.from_family("E3", 6)
    ev = error_func(UNIFORM, COST, targets, -20.0)
    assert ev.feasible
    assert ev.value >= 0.99


def test_error_is_infeasible_close_to_zero():
    targets = TargetSet.from_family("E3", 6)
    assert not error_func(UNIFORM, COST, targets, -0.05).feasible


def test_error_func_is_consistent_on_nested_example(e1_solution):
    targets, nested = e1_solution
    ev = error_func(UNIFORM, COST, targets, nested.C)
    assert ev.feasible
    assert abs(ev.value) <= 1e-4
    assert ev.nested_consistent


def test_theoretical_h_is_nonincreasing():
    density = build_density(GridSpec(resolution=64))
    targets = TargetSet.from_family("E1", 6)
    values = []
    for C in np.linspace(-5.0, -1.9, 50):
        h = theoretical_h(density, COST, targets, float(C))
        if h.feasible:
            values.append(h.value)
    assert len(values) >= 30
    assert np.all(np.diff(values) <= 1e-9)


def test_theoretical_h_runs_out_of_mass_near_zero():
    targets = TargetSet.from_family("E1", 6)
    assert theoretical_h(UNIFORM, COST, targets, -0.01).value == -math.inf


def test_objective_of_solution_is_finite(e1_solution):
    targets, report = e1_solution
    tess = LaguerreEngine(UNIFORM, COST, targets).tessellate(report.v)
    value = objective_value(UNIFORM, COST, targets, report.masses, tess)
    assert math.isfinite(value)
    with pytest.raises(ValueError):
        objective_value(UNIFORM, COST, targets, [1.0], tess)


def test_c_search_bounds_need_two_targets(grid64):
    with pytest.raises(ValueError):
        c_search_bounds(COST, TargetSet.from_family("E1", 1), grid64)


def test_quadrature_floor_loosens_tolerance(e1_solution):
    targets, _ = e1_solution
    report = newton_standard(UNIFORM, COST, targets, tol=1e-12, quadrature_floor=True)
    assert report.succeeded


def test_entropy_energy_is_the_plain_exponential():
    v = np.array([0.0, 0.4, -0.3])
    assert_allclose(ENTROPY.prescribed(-1.2, v), np.exp(-1.2 - v))
    assert_allclose(ENTROPY.f_prime(ENTROPY.f_prime_inverse(v)), v)
    assert ENTROPY.prescribed_one(-1.2, 0.4) == pytest.approx(math.exp(-1.6))
    assert ENTROPY.prescribed(ENTROPY.constant(v), v).sum() == pytest.approx(1.0)


@pytest.mark.parametrize("weight", [0.0, -1.0, math.inf])
def test_energy_weight_must_be_positive(weight):
    with pytest.raises(ValueError):
        InternalEnergy(weight=weight)


@pytest.fixture(scope="module")
def weighted_solution():
    targets = TargetSet.from_family("E1", 3)
    energy = InternalEnergy(weight=0.5)
    return targets, energy, nested_bisection(UNIFORM, COST, targets, energy=energy)


def test_weighted_energy_meets_its_first_order_condition(weighted_solution):
    targets, energy, report = weighted_solution
    assert report.succeeded, report.message
    assert report.details["energy_weight"] == 0.5
    assert report.details["first_order_gap"] <= 1e-4
    nu = np.asarray(report.masses)
    assert_allclose(np.asarray(report.v) + 0.5 * np.log(nu), report.C, atol=1e-4)
    engine = LaguerreEngine(UNIFORM, COST, targets)
    assert np.abs(residual_H(UNIFORM, COST, targets, report.v, report.C, engine, energy)).max() <= 1e-4
    assert np.abs(residual_G(UNIFORM, COST, targets, report.v, engine, energy)).max() <= 1e-4


def test_weighted_energy_differs_from_entropy(weighted_solution, e1_solution):
    _, _, weighted = weighted_solution
    _, plain = e1_solution
    # A smaller weight lets transport cost dominate: C moves towards zero.
    assert weighted.C > plain.C + 0.1


def test_weighted_energy_solvers_agree(weighted_solution):
    targets, energy, nested = weighted_solution
    for solver in (newton_standard, nested_newton):
        report = solver(UNIFORM, COST, targets, energy=energy)
        assert report.succeeded, report.message
        assert report.C == pytest.approx(nested.C, abs=1e-3)
    theoretical = nested_bisection(UNIFORM, COST, targets, error="theoretical", energy=energy)
    assert theoretical.C == pytest.approx(nested.C, abs=1e-3)


def test_weighted_c_bounds_contain_the_solution(weighted_solution):
    targets, energy, report = weighted_solution
    lo, hi = c_search_bounds(COST, targets, GRID, energy)
    assert lo <= report.C <= hi
    lower, upper = entropy_weight_bounds(COST, targets, GRID, weight=energy.weight)
    nu = np.asarray(report.masses)
    assert np.all(lower <= nu + 1e-6)
    assert np.all(nu <= upper + 1e-6)
    assert c_search_bounds(COST, targets, GRID, ENTROPY) == c_search_bounds(COST, targets, GRID)


@pytest.fixture(scope="module")
def parabola_six():
    # F(y) = y^2 / 8 with y_i = i / N: the top target wins every cell at v = 0.
    density, cost, targets = build_congestion(RunConfig(A=8, n=6, grid=64))
    return density, cost, targets, nested_bisection(density, cost, targets)


def test_zero_start_leaves_bilinear_cells_empty(parabola_six):
    density, cost, targets, _ = parabola_six
    masses = LaguerreEngine(density, cost, targets).masses(np.zeros(6))
    assert np.any(masses <= 0)
    start = splitting_start(density, cost, targets)
    assert start[0] == 0.0
    at_start = LaguerreEngine(density, cost, targets).masses(start)
    assert np.all(at_start > 0)
    assert_allclose(at_start, np.full(6, 1.0 / 6.0), atol=5e-2)


@pytest.mark.parametrize("solver", [newton_standard, newton_damped])
def test_newton_recovers_from_an_empty_cell_start(parabola_six, solver, caplog):
    density, cost, targets, nested = parabola_six
    assert nested.succeeded, nested.message
    with caplog.at_level("INFO", logger="nested_transport.solvers.congestion"):
        report = solver(density, cost, targets)
    assert "splitting levels" in caplog.text
    assert report.succeeded, report.message
    assert report.C == pytest.approx(nested.C, abs=1e-3)


@pytest.mark.parametrize("n", [6, 12])
def test_quadratic_profile_above_e_squared_is_certified_and_nested(n):
    density, cost, targets = build_congestion(RunConfig(A=8, n=n, grid=96))
    assert certify_nested_apriori(density, cost, targets).guaranteed_nested
    report = nested_bisection(density, cost, targets)
    assert report.succeeded, report.message
    assert report.nested
    assert check_nested(LaguerreEngine(density, cost, targets).tessellate(report.v)).nested


@settings(max_examples=20)
@given(family=st.sampled_from(["E1", "E2", "E3"]), n=st.integers(min_value=2, max_value=4),
       measure=st.sampled_from(["uniform", "product_xy"]))
def test_solutions_respect_weight_and_constant_bounds(family, n, measure):
    density = SMALL_DENSITIES[measure]
    targets = TargetSet.from_family(family, n)
    report = nested_bisection(density, COST, targets)
    assume(report.succeeded)
    lower, upper = entropy_weight_bounds(COST, targets, SMALL)
    nu = np.asarray(report.masses)
    assert np.all(lower <= nu + 1e-6)
    assert np.all(nu <= upper + 1e-6)
    lo, hi = c_search_bounds(COST, targets, SMALL)
    assert lo <= report.C <= hi


# ---------------------------------------------------------------------------
# Table reproductions at full resolution
# ---------------------------------------------------------------------------

FULL = GridSpec(resolution=512)


@pytest.mark.slow
@pytest.mark.parametrize("family", ["E1", "E2", "E3"])
@pytest.mark.parametrize("n", [3, 6, 12])
def test_uniform_table_constants(family, n):
    density = build_density(FULL, "uniform")
    report = nested_bisection(density, COST, TargetSet.from_family(family, n))
    assert report.succeeded
    assert report.C == pytest.approx(reference_constant("uniform", family, n), abs=2e-2)


@pytest.mark.slow
@pytest.mark.parametrize("family", ["E1", "E2"])
@pytest.mark.parametrize("n", [3, 6])
def test_product_table_constants(family, n):
    density = build_density(FULL, "product_xy")
    targets = TargetSet.from_family(family, n)
    expected = reference_constant("product_xy", family, n)
    for solver in (newton_damped, nested_bisection, nested_newton):
        report = solver(density, COST, targets)
        assert report.succeeded, report.message
        assert report.C == pytest.approx(expected, abs=2e-2)


@pytest.mark.slow
def test_standard_newton_fails_on_e1_product():
    density = build_density(FULL, "product_xy")
    report = newton_standard(density, COST, TargetSet.from_family("E1", 3))
    assert report.status == SolveStatus.FAILED


@pytest.mark.slow
@pytest.mark.parametrize("measure", ["uniform", "product_xy"])
@pytest.mark.parametrize("n", [3, 6, 12])
def test_e1_is_always_nested(measure, n):
    density = build_density(FULL, measure)
    report = nested_bisection(density, COST, TargetSet.from_family("E1", n))
    assert report.succeeded
    assert report.nested


@pytest.mark.slow
def test_e3_product_three_targets_is_not_nested():
    density = build_density(GridSpec(resolution=256), "product_xy")
    targets = TargetSet.from_family("E3", 3)
    report = newton_standard(density, COST, targets)
    assert report.v
    engine = LaguerreEngine(density, COST, targets)
    assert not check_nested(engine.tessellate(report.v)).nested


@pytest.mark.slow
def test_e2_uniform_is_nested():
    density = build_density(FULL, "uniform")
    report = nested_bisection(density, COST, TargetSet.from_family("E2", 6))
    engine = LaguerreEngine(density, COST, TargetSet.from_family("E2", 6))
    assert check_nested(engine.tessellate(report.v)).nested


# Parenthesized iteration counts of the uniform-measure table, N <= 12.
NEWTON_ITERATIONS = {
    ("E1", 3): 3, ("E1", 6): 3, ("E1", 12): 3,
    ("E2", 3): 2, ("E2", 6): 2, ("E2", 12): 3,
    ("E3", 3): 1, ("E3", 6): 3, ("E3", 12): 3,
}


@pytest.mark.slow
@pytest.mark.parametrize("family,n", sorted(NEWTON_ITERATIONS))
def test_newton_iteration_envelope(family, n):
    density = build_density(FULL, "uniform")
    targets = TargetSet.from_family(family, n)
    expected = NEWTON_ITERATIONS[(family, n)]
    for solver in (newton_standard, newton_damped):
        report = solver(density, COST, targets)
        assert report.succeeded, report.message
        assert abs(report.iterations - expected) <= 2


@pytest.mark.slow
@pytest.mark.parametrize("family", ["E1", "E2", "E3"])
@pytest.mark.parametrize("n", [3, 6, 12])
def test_nested_bisection_iteration_envelope(family, n):
    density = build_density(FULL, "uniform")
    report = nested_bisection(density, COST, TargetSet.from_family(family, n))
    assert report.succeeded
    # 16 to 18 bisections, give or take four
    assert 12 <= report.iterations <= 22


@pytest.mark.slow
def test_damped_newton_on_e1_product_needs_one_halving():
    density = build_density(FULL, "product_xy")
    report = newton_damped(density, COST, TargetSet.from_family("E1", 3))
    assert report.succeeded, report.message
    assert abs(report.iterations - 3) <= 2
    assert report.damping_steps == 1


@pytest.mark.slow
def test_e4_product_at_192_targets_is_not_nested():
    density = build_density(FULL, "product_xy")
    report = nested_bisection(density, COST, TargetSet.from_family("E4", 192))
    assert report.status == SolveStatus.NOT_NESTED
