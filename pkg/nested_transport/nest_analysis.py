"""Nestedness theory on the grid: splitting levels, k_max, D_min and a-priori certificates.

Interface indices are zero-based: interface ``i`` separates targets i and
i + 1 and carries the field g_i = c(., y_{i+1}) - c(., y_i).
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from nested_transport.constants import DEFAULTS
from nested_transport.geometry import (
    BilinearCost,
    CostSpec,
    DensityField,
    DifferenceField,
    GridSpec,
    SquaredDistanceCost,
    TargetSet,
    cost_difference_field,
    superlevel_mask,
    superlevel_mass,
)
from nested_transport.numerics import ScalarRootConfig, scalar_root
from nested_transport.schemas import CertificateRecord, NestCertificate

logger = logging.getLogger(__name__)

_MASS_EDGE = 1e-15


@dataclass(frozen=True)
class SplittingLevels:
    k: np.ndarray
    residuals: np.ndarray

    def potentials(self) -> np.ndarray:
        """v = (0, k_1, k_1 + k_2, ...): consecutive potentials differ by the levels."""
        return np.concatenate([[0.0], np.cumsum(self.k)])


def difference_fields(density: DensityField, cost: CostSpec, targets: TargetSet) -> List[DifferenceField]:
    pts = density.grid.midpoints()
    return [cost_difference_field(cost, targets, i, density.grid, points=pts) for i in range(targets.n - 1)]


def level_for_mass(field: DifferenceField, density: DensityField, target: float,
                   tol_x: float = 1e-12) -> float:
    """k with mu(X_>=(k)) = target; -inf / +inf when the target is the whole or no mass."""
    if target >= 1.0 - _MASS_EDGE:
        return -np.inf
    if target <= _MASS_EDGE:
        return np.inf
    lo, hi = field.bracket
    result = scalar_root(lambda k: superlevel_mass(field, k, density) - target,
                         ScalarRootConfig(bracket=(lo - 1.0, hi + 1.0), tol_x=tol_x, max_iter=400))
    return float(result.root)


def splitting_levels(density: DensityField, cost: CostSpec, targets: TargetSet, nu: Sequence[float],
                     fields: Optional[List[DifferenceField]] = None) -> SplittingLevels:
    nu = np.asarray(nu, dtype=float)
    if nu.size != targets.n:
        raise ValueError(f"Weight vector has {nu.size} entries for {targets.n} targets")
    if np.any(nu < -1e-14) or abs(nu.sum() - 1.0) > 1e-9:
        raise ValueError("Weights must lie in the probability simplex")
    fields = fields or difference_fields(density, cost, targets)
    cumulative = np.cumsum(nu)[:-1]
    k = np.array([level_for_mass(fields[r], density, cumulative[r]) for r in range(targets.n - 1)])
    residuals = np.array([
        superlevel_mass(fields[r], k[r], density) - min(max(cumulative[r], 0.0), 1.0)
        for r in range(targets.n - 1)
    ])
    return SplittingLevels(k=k, residuals=residuals)


def _check_interface(targets: TargetSet, i: int):
    if not 0 <= i <= targets.n - 3:
        raise ValueError(f"Index {i} needs a following interface; valid range is 0..{targets.n - 3}")


def k_max(density: DensityField, cost: CostSpec, targets: TargetSet, i: int, k_i: float,
          fields: Optional[List[DifferenceField]] = None) -> float:
    """Largest k keeping X_>=(y_i, k_i) inside X_>=(y_{i+1}, k)."""
    _check_interface(targets, i)
    fields = fields or difference_fields(density, cost, targets)
    mask = superlevel_mask(fields[i], k_i)
    if not mask.any():
        return np.inf
    return float(fields[i + 1].values[mask].min())


def d_min(density: DensityField, cost: CostSpec, targets: TargetSet, i: int, k_i: float,
          fields: Optional[List[DifferenceField]] = None) -> float:
    """Minimal mass difference mu(X_>=(y_{i+1}, k_max) minus X_>=(y_i, k_i))."""
    fields = fields or difference_fields(density, cost, targets)
    kmax = k_max(density, cost, targets, i, k_i, fields)
    outer = superlevel_mask(fields[i + 1], kmax)
    inner = superlevel_mask(fields[i], k_i)
    return density.mass(outer & ~inner)


def sup_d_min(density: DensityField, cost: CostSpec, targets: TargetSet, i: int,
              samples: int = DEFAULTS["k_samples"], fields: Optional[List[DifferenceField]] = None) -> float:
    """Sampled lower estimate of sup_k D_min(y_i, k) over quantiles of g_i."""
    _check_interface(targets, i)
    fields = fields or difference_fields(density, cost, targets)
    ks = np.quantile(fields[i].values, np.linspace(0.0, 1.0, samples))
    return max(d_min(density, cost, targets, i, float(k), fields) for k in np.unique(ks))


def analytic_sup_bound_bilinear(cost: CostSpec, targets: TargetSet, i: int) -> float:
    """Triangle-area bound on sup_k D_min for bilinear costs under uniform mu on the unit square."""
    if not isinstance(cost, BilinearCost):
        raise ValueError(f"Analytic bound needs a bilinear cost, got {cost.name}")
    _check_interface(targets, i)
    y = targets.parameters
    F = cost.F_values(targets)
    slope_next = (F[i + 2] - F[i + 1]) / (y[i + 2] - y[i + 1])
    slope = (F[i + 1] - F[i]) / (y[i + 1] - y[i])
    return 0.5 * (slope_next - slope)


def _lipschitz_points(cost: CostSpec, grid: GridSpec) -> np.ndarray:
    # For both shipped costs c_j - c_k is affine in x, so its modulus peaks at a corner cell.
    if isinstance(cost, (BilinearCost, SquaredDistanceCost)):
        a1, a2 = grid.axes()
        return np.array([[a1[0], a2[0]], [a1[-1], a2[0]], [a1[0], a2[-1]], [a1[-1], a2[-1]]])
    return grid.midpoints()


def lipschitz_Mc(cost: CostSpec, targets: TargetSet, grid: GridSpec) -> float:
    """max over domain points and pairs j != k of |c(x,y_j) - c(x,y_k)| / |y_j - y_k|."""
    n = targets.n
    if n < 2:
        return 0.0
    pts = _lipschitz_points(cost, grid)
    values = np.column_stack([cost.evaluate(pts, targets, j) for j in range(n)])
    best = 0.0
    for j in range(n - 1):
        others = np.arange(j + 1, n)
        dist = np.array([cost.target_distance(targets, j, k) for k in others])
        keep = dist > 0
        if not keep.any():
            continue
        diff = np.abs(values[:, others[keep]] - values[:, [j]]).max(axis=0)
        best = max(best, float((diff / dist[keep]).max()))
    return best


def entropy_J(w: np.ndarray) -> float:
    """J_w(1) = ln(1 / sum_i e^{-w_i}) for the entropy energy."""
    return float(-logsumexp(-np.asarray(w, dtype=float)))


def _anchor_distances(cost: CostSpec, targets: TargetSet, Mc: float) -> np.ndarray:
    return Mc * np.array([cost.target_distance(targets, i, 0) for i in range(targets.n)])


def entropy_weight_bounds(cost: CostSpec, targets: TargetSet, grid: GridSpec,
                          Mc: Optional[float] = None, weight: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
    """Sandwich lower_i <= nu_i <= upper_i for the minimizer under weight * sum nu ln nu.

    The weight enters as the cost divided by it.
    """
    Mc = lipschitz_Mc(cost, targets, grid) if Mc is None else Mc
    d = _anchor_distances(cost, targets, Mc / weight)
    lower = np.exp(entropy_J(-d) - d)
    upper = np.exp(entropy_J(d) + d)
    return lower, upper


def certify_nested_apriori(density: DensityField, cost: CostSpec, targets: TargetSet,
                           samples: int = DEFAULTS["k_samples"]) -> NestCertificate:
    """Sufficient condition: sup_k D_min(y_i, k) < lower bound of nu_{i+1} for every i."""
    grid = density.grid
    Mc = lipschitz_Mc(cost, targets, grid)
    lower, _ = entropy_weight_bounds(cost, targets, grid, Mc)
    d = _anchor_distances(cost, targets, Mc)
    analytic = (isinstance(cost, BilinearCost) and density.kind == "uniform"
                and grid.bounds == (0.0, 0.0, 1.0, 1.0))
    fields = None if analytic else difference_fields(density, cost, targets)
    records = []
    for i in range(targets.n - 2):
        if analytic:
            sup = analytic_sup_bound_bilinear(cost, targets, i)
        else:
            sup = sup_d_min(density, cost, targets, i, samples, fields)
        bound = float(lower[i + 1])
        margin = bound - sup
        records.append(CertificateRecord(
            index=i, sup_d_min=float(sup), lower_bound=bound,
            coarse_lower_bound=float(np.exp(-2.0 * d[i + 1]) / targets.n),
            margin=float(margin), verdict=bool(margin > 0), sampled=not analytic,
        ))
    granted = all(r.verdict for r in records)
    logger.info(f"[certify] N={targets.n} M_c={Mc:.4g} guaranteed_nested={granted}")
    return NestCertificate(records=records, guaranteed_nested=granted, lipschitz_constant=Mc,
                           source="analytic" if analytic else "sampled")
