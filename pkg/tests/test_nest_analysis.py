import math

import numpy as np
import pytest

from nested_transport.geometry import (
    BilinearCost,
    GridSpec,
    SquaredDistanceCost,
    TargetSet,
    build_density,
    quadratic_F,
    superlevel_mask,
    superlevel_mass,
)
from nested_transport.nest_analysis import (
    analytic_sup_bound_bilinear,
    certify_nested_apriori,
    d_min,
    difference_fields,
    entropy_J,
    entropy_weight_bounds,
    k_max,
    level_for_mass,
    lipschitz_Mc,
    splitting_levels,
    sup_d_min,
)
from nested_transport.solvers.congestion import nested_bisection


def _parabola_targets(n):
    t = np.arange(1, n + 1) / n
    return TargetSet.explicit(t)


def test_level_for_mass_sentinels(uniform64, sqdist, e1_three):
    field = difference_fields(uniform64, sqdist, e1_three)[0]
    assert level_for_mass(field, uniform64, 1.0) == -np.inf
    assert level_for_mass(field, uniform64, 0.0) == np.inf


@pytest.mark.parametrize("target", [0.1, 0.37, 0.5, 0.93])
def test_level_for_mass_hits_target(uniform64, sqdist, e1_three, target):
    field = difference_fields(uniform64, sqdist, e1_three)[1]
    k = level_for_mass(field, uniform64, target)
    assert superlevel_mass(field, k, uniform64) == pytest.approx(target, abs=1e-9)


def test_splitting_levels_reproduce_cumulative_masses(product64, sqdist):
    targets = TargetSet.from_family("E2", 4)
    nu = np.array([0.1, 0.2, 0.3, 0.4])
    levels = splitting_levels(product64, sqdist, targets, nu)
    assert levels.k.shape == (3,)
    assert np.all(np.abs(levels.residuals) <= 1e-9)


def test_splitting_levels_reject_non_simplex(uniform64, sqdist, e1_three):
    with pytest.raises(ValueError):
        splitting_levels(uniform64, sqdist, e1_three, [0.5, 0.5, 0.5])
    with pytest.raises(ValueError):
        splitting_levels(uniform64, sqdist, e1_three, [0.5, 0.5])


def test_k_max_contains_previous_superlevel_set(uniform64, sqdist):
    targets = TargetSet.from_family("E1", 4)
    fields = difference_fields(uniform64, sqdist, targets)
    k0 = level_for_mass(fields[0], uniform64, 0.3)
    kmax = k_max(uniform64, sqdist, targets, 0, k0, fields)
    inner = superlevel_mask(fields[0], k0)
    outer = superlevel_mask(fields[1], kmax)
    assert np.all(outer[inner])
    # Any larger level loses a cell of the inner set.
    assert not np.all(superlevel_mask(fields[1], np.nextafter(kmax, np.inf))[inner])


def test_k_max_of_empty_set_is_infinite(uniform64, sqdist):
    targets = TargetSet.from_family("E1", 4)
    assert k_max(uniform64, sqdist, targets, 0, np.inf) == np.inf


def test_k_max_index_range(uniform64, sqdist, e1_three):
    with pytest.raises(ValueError):
        k_max(uniform64, sqdist, e1_three, 1, 0.0)


def test_d_min_is_a_mass(uniform64, sqdist):
    targets = TargetSet.from_family("E3", 5)
    fields = difference_fields(uniform64, sqdist, targets)
    for k in np.quantile(fields[1].values, [0.1, 0.5, 0.9]):
        value = d_min(uniform64, sqdist, targets, 1, float(k), fields)
        assert 0.0 <= value <= 1.0


def test_sampled_sup_matches_triangle_area():
    density = build_density(GridSpec(resolution=256))
    cost = quadratic_F(2.0)
    targets = _parabola_targets(3)
    analytic = analytic_sup_bound_bilinear(cost, targets, 0)
    assert analytic == pytest.approx(1.0 / 6.0)
    sampled = sup_d_min(density, cost, targets, 0, samples=256)
    assert sampled == pytest.approx(analytic, abs=2e-2)


def test_analytic_bound_needs_bilinear_cost(e1_three):
    with pytest.raises(ValueError):
        analytic_sup_bound_bilinear(SquaredDistanceCost(), e1_three, 0)


def test_lipschitz_constant_of_linear_profile(grid64):
    targets = TargetSet.explicit([0.0, 0.5, 1.0])
    # |x1 + x2| peaks at the corner cell.
    assert lipschitz_Mc(BilinearCost(), targets, grid64) == pytest.approx(2.0, abs=2.0 / 64)


def test_lipschitz_constant_of_single_target(grid64):
    assert lipschitz_Mc(BilinearCost(), TargetSet.explicit([0.3]), grid64) == 0.0


def test_entropy_J_of_equal_weights():
    assert entropy_J(np.zeros(4)) == pytest.approx(-math.log(4.0))


def test_weight_bounds_bracket_uniform_weights(grid64):
    targets = _parabola_targets(5)
    lower, upper = entropy_weight_bounds(quadratic_F(8.0), targets, grid64)
    assert np.all(lower > 0)
    assert np.all(upper >= lower)
    assert lower.sum() <= 1.0 + 1e-12
    assert upper.sum() >= 1.0 - 1e-12


@pytest.mark.parametrize("n", [6, 12])
def test_certificate_granted_above_threshold(uniform64, n):
    certificate = certify_nested_apriori(uniform64, quadratic_F(8.0), _parabola_targets(n))
    assert certificate.guaranteed_nested
    assert certificate.source == "analytic"
    assert len(certificate.records) == n - 2
    assert all(r.margin > 0 for r in certificate.records)


def test_certificate_refused_below_threshold(uniform64):
    certificate = certify_nested_apriori(uniform64, quadratic_F(1.0), _parabola_targets(6))
    assert not certificate.guaranteed_nested


def test_sampled_certificate_for_nonuniform_density(product64):
    certificate = certify_nested_apriori(product64, quadratic_F(8.0), _parabola_targets(4), samples=64)
    assert certificate.source == "sampled"
    assert all(r.sampled for r in certificate.records)


@pytest.mark.parametrize("family", ["E1", "E2"])
def test_solved_nested_masses_dominate_d_min(uniform128, sqdist, family):
    targets = TargetSet.from_family(family, 6)
    report = nested_bisection(uniform128, sqdist, targets)
    assert report.succeeded and report.nested
    v, nu = np.asarray(report.v), np.asarray(report.masses)
    fields = difference_fields(uniform128, sqdist, targets)
    for i in range(targets.n - 2):
        # the level of interface i is the potential step v_{i+1} - v_i
        assert d_min(uniform128, sqdist, targets, i, v[i + 1] - v[i], fields) <= nu[i + 1] + 1e-2
