"""Brute-force references for the solvers: simplex sweeps, Monte Carlo masses, grid refinement."""

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from nested_transport.geometry import CostSpec, DensityField, TargetSet
from nested_transport.laguerre import LaguerreEngine, Potentials, transport_cost
from nested_transport.nest_analysis import difference_fields, splitting_levels
from nested_transport.problems import build_congestion
from nested_transport.schemas import RefinementStudy, RunConfig
from nested_transport.solvers.congestion import ENTROPY, InternalEnergy, nested_bisection

logger = logging.getLogger(__name__)


@dataclass
class SweepResult:
    nu: np.ndarray
    objective: float
    evaluations: int


@dataclass
class MonteCarloEstimate:
    masses: np.ndarray
    stderr: np.ndarray
    samples: int


class _Objective:
    """W_c(mu, nu) + sum nu ln nu with W_c from the splitting-level tessellation."""

    def __init__(self, density: DensityField, cost: CostSpec, targets: TargetSet):
        self.density, self.cost, self.targets = density, cost, targets
        self.engine = LaguerreEngine(density, cost, targets)
        self.fields = difference_fields(density, cost, targets)
        self.evaluations = 0

    def __call__(self, nu: np.ndarray) -> float:
        self.evaluations += 1
        v = splitting_levels(self.density, self.cost, self.targets, nu, self.fields).potentials()
        if not np.all(np.isfinite(v)):
            return math.inf
        tess = self.engine.tessellate(Potentials(v))
        return transport_cost(tess, self.cost) + ENTROPY.energy(nu)


def _interior_simplex(n: int, resolution: int):
    for head in itertools.product(range(1, resolution), repeat=n - 1):
        last = resolution - sum(head)
        if last >= 1:
            yield np.array(list(head) + [last], dtype=float) / resolution


def _local_simplex(center: np.ndarray, step: float, radius: int):
    n = center.size
    for offsets in itertools.product(range(-radius, radius + 1), repeat=n - 1):
        head = center[:-1] + step * np.array(offsets)
        last = 1.0 - head.sum()
        if np.all(head > 0) and last > 0:
            yield np.concatenate([head, [last]])


def simplex_sweep_min(density: DensityField, cost: CostSpec, targets: TargetSet, resolution: int = 40,
                      refinements: int = 3) -> SweepResult:
    """Grid argmin of the congestion objective over the simplex (N <= 3).

    The coarse grid is followed by ``refinements`` local sweeps, each with a
    five times finer step; for N = 2 a bounded golden-section search finishes.
    """
    n = targets.n
    if n > 3:
        raise ValueError(f"Simplex sweep is limited to N <= 3, got {n}")
    if not 2 <= resolution <= 400:
        raise ValueError(f"Resolution must lie in [2, 400], got {resolution}")
    objective = _Objective(density, cost, targets)
    if n == 1:
        nu = np.ones(1)
        return SweepResult(nu, objective(nu), objective.evaluations)

    best_nu, best_val = None, math.inf
    for nu in _interior_simplex(n, resolution):
        val = objective(nu)
        if val < best_val:
            best_nu, best_val = nu, val
    step = 1.0 / resolution
    for _ in range(refinements):
        step /= 5.0
        for nu in _local_simplex(best_nu, step, 5):
            val = objective(nu)
            if val < best_val:
                best_nu, best_val = nu, val

    if n == 2:
        lo, hi = max(best_nu[0] - step, 1e-9), min(best_nu[0] + step, 1 - 1e-9)
        res = minimize_scalar(lambda a: objective(np.array([a, 1.0 - a])), bounds=(lo, hi),
                              method="bounded", options={"xatol": 1e-9})
        if res.fun < best_val:
            best_nu, best_val = np.array([res.x, 1.0 - res.x]), float(res.fun)

    logger.info(f"[oracle] simplex sweep N={n}: nu={np.round(best_nu, 6)} objective={best_val:.8f}")
    return SweepResult(best_nu, float(best_val), objective.evaluations)


def monte_carlo_masses(density: DensityField, cost: CostSpec, targets: TargetSet, v: Sequence[float],
                       samples: int = 200_000, seed: int = 0, batch: int = 100_000) -> MonteCarloEstimate:
    """Rejection-sample mu, assign each sample to argmin c(x, y_i) - v_i, count."""
    if density.fn is None:
        raise ValueError("Monte Carlo masses need the density function, not only its grid weights")
    v = np.asarray(v, dtype=float)
    if v.size != targets.n:
        raise ValueError(f"Expected {targets.n} potentials, got {v.size}")
    rng = np.random.default_rng(seed)
    x0, y0, x1, y1 = density.grid.bounds
    peak = density.peak()
    counts = np.zeros(targets.n, dtype=np.int64)
    accepted = 0
    while accepted < samples:
        pts = np.column_stack([rng.uniform(x0, x1, batch), rng.uniform(y0, y1, batch)])
        keep = rng.uniform(0.0, peak, batch) <= density.fn(pts[:, 0], pts[:, 1])
        pts = pts[keep][: samples - accepted]
        scores = np.column_stack([cost.evaluate(pts, targets, j) - v[j] for j in range(targets.n)])
        counts += np.bincount(scores.argmin(axis=1), minlength=targets.n)
        accepted += pts.shape[0]
    p = counts / accepted
    return MonteCarloEstimate(masses=p, stderr=np.sqrt(p * (1.0 - p) / accepted), samples=accepted)


def refined_reference(config: RunConfig, M_list: Sequence[int]) -> RefinementStudy:
    """nested_bisection at each grid resolution, with a second-order extrapolation of C."""
    M_list = list(M_list)
    if any(b <= a for a, b in zip(M_list, M_list[1:])):
        raise ValueError(f"Resolutions must increase, got {M_list}")
    constants = []
    for M in M_list:
        density, cost, targets = build_congestion(config.model_copy(update={"grid": M}))
        report = nested_bisection(density, cost, targets, C_interval=config.C_interval, tol=config.tol,
                                  maxit=config.maxit, energy=InternalEnergy(weight=config.energy_weight))
        constants.append(report.C if report.succeeded else None)
        logger.info(f"[oracle] M={M}: C={report.C} ({report.status.value})")

    known = [c for c in constants if c is not None]
    differences = [abs(b - a) for a, b in zip(known, known[1:])]
    extrapolated: Optional[float] = None
    if len(known) >= 2:
        extrapolated = known[-1] + (known[-1] - known[-2]) / 3.0
    monotone = all(b <= a + 1e-12 for a, b in zip(differences, differences[1:]))
    return RefinementStudy(resolutions=M_list, constants=constants, differences=differences,
                           extrapolated=extrapolated, monotone=monotone)
