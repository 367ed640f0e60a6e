"""Laguerre tessellations on the quadrature grid.

Labels are hard argmins of c(x, y_i) - v_i (smallest index on ties).
Masses use a first-order boundary-fraction rule: in each grid cell the
winner keeps ``clip(1/2 + gap / spread, 1/2, 1)`` of the cell weight and
the runner-up gets the rest, so masses vary continuously with v.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from nested_transport.geometry import CostSpec, DensityField, TargetSet
from nested_transport.schemas import NestedVerdict

logger = logging.getLogger(__name__)

# Cache c(x, y_j) for every target when the table stays below this many floats.
_CACHE_LIMIT = 16_000_000
_MAX_REPORTED = 1000


@dataclass(frozen=True)
class Potentials:
    v: np.ndarray
    C: Optional[float] = None

    def __post_init__(self):
        v = np.array(np.atleast_1d(self.v), dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValueError("Potentials must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "v", v)

    @classmethod
    def zeros(cls, n: int) -> "Potentials":
        return cls(np.zeros(n))

    @property
    def n(self) -> int:
        return int(self.v.size)

    def normalized(self) -> "Potentials":
        """Gauge v_1 = 0 (C shifts with v)."""
        shift = float(self.v[0])
        C = None if self.C is None else self.C - shift
        return Potentials(self.v - shift, C)

    def shifted(self, delta: float) -> "Potentials":
        C = None if self.C is None else self.C + delta
        return Potentials(self.v + delta, C)


@dataclass
class _TopTwo:
    best: np.ndarray
    best_score: np.ndarray
    second: np.ndarray
    second_score: np.ndarray


class LaguerreEngine:
    """Grid, density and cost fields bundled for repeated tessellation queries."""

    def __init__(self, density: DensityField, cost: CostSpec, targets: TargetSet):
        cost.validate(targets)
        self.density = density
        self.cost = cost
        self.targets = targets
        self.grid = density.grid
        self.points = self.grid.midpoints()
        self.weights = density.weights
        self.h1, self.h2 = self.grid.spacing
        self._fields = None
        if targets.n * self.points.shape[0] <= _CACHE_LIMIT:
            self._fields = np.vstack([cost.evaluate(self.points, targets, j) for j in range(targets.n)])

    @property
    def n(self) -> int:
        return self.targets.n

    def cost_field(self, j: int) -> np.ndarray:
        if self._fields is not None:
            return self._fields[j]
        return self.cost.evaluate(self.points, self.targets, j)

    def with_density(self, density: DensityField) -> "LaguerreEngine":
        """Same grid, cost and targets under another density, sharing cached fields."""
        if density.grid != self.grid:
            raise ValueError("Densities must live on the same grid")
        twin = object.__new__(LaguerreEngine)
        twin.__dict__.update(self.__dict__)
        twin.density = density
        twin.weights = density.weights
        return twin

    # -- scores ----------------------------------------------------------

    def top_two(self, v: Sequence[float], count: Optional[int] = None) -> _TopTwo:
        """Best and runner-up of c(x, y_j) - v_j over targets 0..count-1."""
        v = np.asarray(v, dtype=float)
        count = self.n if count is None else count
        size = self.points.shape[0]
        best = np.zeros(size, dtype=np.int64)
        best_score = self.cost_field(0) - v[0]
        second = np.full(size, -1, dtype=np.int64)
        second_score = np.full(size, np.inf)
        top = _TopTwo(best, best_score.copy(), second, second_score)
        for j in range(1, count):
            top = self.merge(top, j, v[j])
        return top

    def merge(self, top: _TopTwo, j: int, vj: float) -> _TopTwo:
        """Add target j (index above every target in ``top``) with potential vj."""
        score = self.cost_field(j) - vj
        wins = score < top.best_score
        runner = ~wins & (score < top.second_score)
        return _TopTwo(
            best=np.where(wins, j, top.best),
            best_score=np.where(wins, score, top.best_score),
            second=np.where(wins, top.best, np.where(runner, j, top.second)),
            second_score=np.where(wins, top.best_score, np.where(runner, score, top.second_score)),
        )

    def shares(self, top: _TopTwo) -> np.ndarray:
        """Fraction of each grid cell kept by its winning index."""
        share = np.ones(top.best.shape)
        live = top.second >= 0
        if not np.any(live):
            return share
        pts = self.points[live]
        grad = (self.cost.gradient(pts, self.targets, top.second[live])
                - self.cost.gradient(pts, self.targets, top.best[live]))
        spread = self.h1 * np.abs(grad[:, 0]) + self.h2 * np.abs(grad[:, 1])
        gap = top.second_score[live] - top.best_score[live]
        frac = np.ones(gap.shape)
        moving = spread > 0
        frac[moving] = np.clip(0.5 + gap[moving] / spread[moving], 0.5, 1.0)
        share[live] = frac
        return share

    def masses_from(self, top: _TopTwo, count: int, share: Optional[np.ndarray] = None) -> np.ndarray:
        share = self.shares(top) if share is None else share
        masses = np.bincount(top.best, weights=self.weights * share, minlength=count)
        live = top.second >= 0
        if np.any(live):
            masses += np.bincount(top.second[live], weights=self.weights[live] * (1.0 - share[live]),
                                  minlength=count)
        return masses[:count]

    def masses(self, v: Sequence[float], count: Optional[int] = None) -> np.ndarray:
        count = self.n if count is None else count
        return self.masses_from(self.top_two(v, count), count)

    def prefix_verdict(self, top: _TopTwo, count: int) -> NestedVerdict:
        """Nestedness of the partial tessellation held in ``top`` (targets 0..count-1)."""
        m = self.grid.resolution
        return check_label_grid(top.best.reshape(m, m), count)

    def tessellate(self, potentials) -> "Tessellation":
        pot = potentials if isinstance(potentials, Potentials) else Potentials(np.asarray(potentials))
        if pot.n != self.n:
            raise ValueError(f"Expected {self.n} potentials, got {pot.n}")
        # Scores use v - v_1: a common shift of v is removed before any rounding.
        top = self.top_two(pot.v - pot.v[0])
        share = self.shares(top)
        masses = self.masses_from(top, self.n, share)
        return Tessellation(labels=top.best, masses=masses, potentials=pot, runner_up=top.second,
                            share=share, density=self.density, cost=self.cost, targets=self.targets)


@dataclass(frozen=True)
class Tessellation:
    labels: np.ndarray
    masses: np.ndarray
    potentials: Potentials
    runner_up: np.ndarray = field(repr=False)
    share: np.ndarray = field(repr=False)
    density: DensityField = field(repr=False)
    cost: CostSpec = field(repr=False)
    targets: TargetSet = field(repr=False)

    @property
    def grid(self):
        return self.density.grid

    @property
    def n(self) -> int:
        return self.targets.n

    def label_grid(self) -> np.ndarray:
        m = self.grid.resolution
        return self.labels.reshape(m, m)

    def present_labels(self):
        return np.unique(self.labels)


def tessellate(density: DensityField, cost: CostSpec, targets: TargetSet, potentials) -> Tessellation:
    return LaguerreEngine(density, cost, targets).tessellate(potentials)


def shift_invariance_check(density: DensityField, cost: CostSpec, targets: TargetSet,
                           potentials, delta: float) -> bool:
    """True when v and v + delta label every grid cell identically."""
    engine = LaguerreEngine(density, cost, targets)
    pot = potentials if isinstance(potentials, Potentials) else Potentials(np.asarray(potentials))
    base = engine.tessellate(pot)
    moved = engine.tessellate(pot.shifted(delta))
    return bool(np.array_equal(base.labels, moved.labels))


def dual_u(tessellation: Tessellation, x) -> np.ndarray:
    """u(x) = min_i c(x, y_i) - v_i at one point or an array of points."""
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    v = tessellation.potentials.v
    scores = np.column_stack([
        tessellation.cost.evaluate(pts, tessellation.targets, j) - v[j] for j in range(tessellation.n)
    ])
    u = scores.min(axis=1)
    return float(u[0]) if np.ndim(x) == 1 else u


def transport_cost(tessellation: Tessellation, cost: Optional[CostSpec] = None) -> float:
    """Quadrature of the transport cost of the map the tessellation induces."""
    cost = cost or tessellation.cost
    pts = tessellation.grid.midpoints()
    w = tessellation.density.weights
    c_best = np.empty(w.shape)
    c_second = np.zeros(w.shape)
    for j in range(tessellation.n):
        c_j = cost.evaluate(pts, tessellation.targets, j)
        c_best = np.where(tessellation.labels == j, c_j, c_best)
        c_second = np.where(tessellation.runner_up == j, c_j, c_second)
    share = tessellation.share
    return math.fsum(w * (share * c_best + (1.0 - share) * c_second))


def check_nested(tessellation: Tessellation) -> NestedVerdict:
    """Nested iff 4-adjacent cells only ever carry consecutive present labels.

    Empty cells are skipped: labels are compared by rank among the labels
    that actually occur.
    """
    return check_label_grid(tessellation.label_grid(), tessellation.n)


def check_label_grid(grid: np.ndarray, n: int) -> NestedVerdict:
    """Adjacency test of ``check_nested`` on an (M, M) grid of labels in [0, n)."""
    present = np.unique(grid)
    rank = np.full(n, -1, dtype=np.int64)
    rank[present] = np.arange(present.size)
    ranked = rank[grid]
    m = grid.shape[0]
    violations = []
    horizontal = np.abs(np.diff(ranked, axis=1)) >= 2
    vertical = np.abs(np.diff(ranked, axis=0)) >= 2
    count = int(horizontal.sum() + vertical.sum())
    for row, col in zip(*np.nonzero(horizontal)):
        violations.append((int(row * m + col), int(row * m + col + 1)))
    for row, col in zip(*np.nonzero(vertical)):
        violations.append((int(row * m + col), int((row + 1) * m + col)))
    if count:
        logger.debug(f"[check_nested] {count} non-consecutive adjacencies")
    return NestedVerdict(nested=count == 0, violations=violations[:_MAX_REPORTED],
                         violation_count=count, present_labels=[int(p) for p in present])
