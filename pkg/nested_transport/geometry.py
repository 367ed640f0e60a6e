"""Source domain, densities, cost families and target curves.

Everything here is evaluated on an M x M midpoint grid. Grid cells are
flattened row-major: cell ``p = row * M + col`` has midpoint
``(x1[col], x2[row])``.
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from nested_transport.constants import CURVE_FAMILIES

logger = logging.getLogger(__name__)

DensityFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned rectangle ``(x1_min, x2_min, x1_max, x2_max)`` split into M x M cells."""

    bounds: Tuple[float, float, float, float] = (0.0, 0.0, 1.0, 1.0)
    resolution: int = 512

    def __post_init__(self):
        x0, y0, x1, y1 = self.bounds
        if not (x1 > x0 and y1 > y0):
            raise ValueError(f"Grid bounds must have positive width and height, got {self.bounds}")
        if int(self.resolution) != self.resolution or self.resolution < 8:
            raise ValueError(f"Grid resolution must be an integer >= 8, got {self.resolution}")
        object.__setattr__(self, "bounds", tuple(float(b) for b in self.bounds))
        object.__setattr__(self, "resolution", int(self.resolution))

    @property
    def spacing(self) -> Tuple[float, float]:
        x0, y0, x1, y1 = self.bounds
        return (x1 - x0) / self.resolution, (y1 - y0) / self.resolution

    @property
    def cell_area(self) -> float:
        h1, h2 = self.spacing
        return h1 * h2

    @property
    def size(self) -> int:
        return self.resolution * self.resolution

    def axes(self) -> Tuple[np.ndarray, np.ndarray]:
        x0, y0, _, _ = self.bounds
        h1, h2 = self.spacing
        idx = np.arange(self.resolution) + 0.5
        return x0 + idx * h1, y0 + idx * h2

    def midpoints(self) -> np.ndarray:
        """(M*M, 2) array of cell midpoints in row-major order."""
        a1, a2 = self.axes()
        X1, X2 = np.meshgrid(a1, a2, indexing="xy")
        return np.column_stack([X1.ravel(), X2.ravel()])

    def locate(self, points: np.ndarray) -> np.ndarray:
        """Flat index of the grid cell containing each point (clamped to the grid)."""
        x0, y0, _, _ = self.bounds
        h1, h2 = self.spacing
        points = np.atleast_2d(points)
        col = np.clip(np.floor((points[:, 0] - x0) / h1).astype(int), 0, self.resolution - 1)
        row = np.clip(np.floor((points[:, 1] - y0) / h2).astype(int), 0, self.resolution - 1)
        return row * self.resolution + col


@dataclass(frozen=True)
class DensityField:
    grid: GridSpec
    weights: np.ndarray
    kind: str = "custom"
    fn: Optional[DensityFn] = field(default=None, compare=False, repr=False)

    @property
    def total(self) -> float:
        return math.fsum(self.weights)

    def mass(self, mask: np.ndarray) -> float:
        """mu of a boolean grid mask."""
        return float(np.sum(self.weights[mask]))

    def peak(self, samples: int = 257) -> float:
        """Upper estimate of the density's sup, for rejection sampling.

        Uses the density function on a fine lattice when there is one, else the
        largest cell average.
        """
        if self.fn is None:
            return float(self.weights.max() / self.grid.cell_area * 1.05)
        x0, y0, x1, y1 = self.grid.bounds
        a1, a2 = np.meshgrid(np.linspace(x0, x1, samples), np.linspace(y0, y1, samples))
        return float(np.max(self.fn(a1.ravel(), a2.ravel()))) * 1.01


def _uniform(x1, x2):
    return np.ones_like(x1)


def _product_xy(x1, x2):
    return 4.0 * x1 * x2


_DENSITIES = {
    "uniform": _uniform,
    "product_xy": _product_xy,
}


def build_density(grid: GridSpec, kind: str = "uniform", fn: Optional[DensityFn] = None) -> DensityField:
    """Midpoint-rule cell masses of a density, renormalized to total mass 1.

    ``kind`` is ``"uniform"``, ``"product_xy"`` (4 x1 x2 on the unit square)
    or ``"custom"`` with a vectorized ``fn(x1, x2)``.
    """
    if kind == "custom":
        if fn is None:
            raise ValueError("Custom density requires fn(x1, x2)")
        density_fn = fn
    elif kind in _DENSITIES:
        density_fn = _DENSITIES[kind]
    else:
        raise ValueError(f"Unknown density kind '{kind}'; expected one of {sorted(_DENSITIES)} or 'custom'")

    pts = grid.midpoints()
    values = np.asarray(density_fn(pts[:, 0], pts[:, 1]), dtype=float)
    if values.shape != (grid.size,):
        values = np.broadcast_to(values, (grid.size,)).astype(float)
    if not np.all(np.isfinite(values)):
        raise ValueError(f"Density '{kind}' returned non-finite values on the grid")
    if np.any(values < 0):
        worst = int(np.argmin(values))
        raise ValueError(
            f"Density '{kind}' is negative at {tuple(pts[worst])} (value {values[worst]:.3g})"
        )
    raw = values * grid.cell_area
    total = math.fsum(raw)
    if total <= 0:
        raise ValueError(f"Density '{kind}' has zero mass on the grid")
    return DensityField(grid=grid, weights=_readonly(raw / total), kind=kind, fn=density_fn)


# ---------------------------------------------------------------------------
# Target curves
# ---------------------------------------------------------------------------

_CURVES = {
    "E1": lambda t: np.column_stack([t, t]),
    "E2": lambda t: np.column_stack([t, (t / np.e) ** 2]),
    "E3": lambda t: np.column_stack([np.cos(t), np.sin(t)]),
    "E4": lambda t: np.column_stack([t, t ** 2]),
    "curve-x^1.5": lambda t: np.column_stack([t, t ** 1.5]),
}


def curve_points(family: str, t: np.ndarray) -> np.ndarray:
    """Planar points y(t) of a shipped curve family."""
    if family not in _CURVES:
        raise ValueError(f"Unknown curve family '{family}'; expected one of {sorted(_CURVES)}")
    return _CURVES[family](np.asarray(t, dtype=float))


@dataclass(frozen=True)
class TargetSet:
    """Ordered targets y_1 < ... < y_N: scalar parameters plus planar embeddings."""

    parameters: np.ndarray
    embedding: np.ndarray
    family: str = "explicit"

    def __post_init__(self):
        params = _readonly(np.atleast_1d(self.parameters))
        emb = _readonly(np.atleast_2d(self.embedding))
        if params.ndim != 1 or params.size < 1:
            raise ValueError("A target set needs at least one target")
        if emb.shape != (params.size, 2):
            raise ValueError(f"Embedding must have shape ({params.size}, 2), got {emb.shape}")
        if np.any(np.diff(params) <= 0):
            raise ValueError("Target parameters must be strictly increasing")
        object.__setattr__(self, "parameters", params)
        object.__setattr__(self, "embedding", emb)

    @property
    def n(self) -> int:
        return int(self.parameters.size)

    @classmethod
    def from_family(cls, family: str, n: int) -> "TargetSet":
        if family not in _CURVES:
            raise ValueError(f"Unknown curve family '{family}'; expected one of {sorted(_CURVES)}")
        if n < 1:
            raise ValueError(f"N must be >= 1, got {n}")
        curve = CURVE_FAMILIES[family]
        if curve["interval_depends_on_n"]:
            a, b = 1.0 / (n + 1), n / (n + 1)
        else:
            a, b = curve["interval"]
        t = np.linspace(a, b, n)
        return cls(parameters=t, embedding=curve_points(family, t), family=family)

    @classmethod
    def explicit(cls, parameters: Sequence[float], embedding: Optional[np.ndarray] = None) -> "TargetSet":
        t = np.asarray(parameters, dtype=float)
        if embedding is None:
            embedding = np.column_stack([t, np.zeros_like(t)])
        return cls(parameters=t, embedding=np.asarray(embedding, dtype=float), family="explicit")


# ---------------------------------------------------------------------------
# Costs
# ---------------------------------------------------------------------------

class CostSpec(ABC):
    """A cost family c(x, y_j) over a target set."""

    name = "cost"

    @abstractmethod
    def evaluate(self, points: np.ndarray, targets: TargetSet, j: int) -> np.ndarray:
        """c(x, y_j) at every point."""

    @abstractmethod
    def gradient(self, points: np.ndarray, targets: TargetSet, idx: np.ndarray) -> np.ndarray:
        """D_x c(x, y_idx[p]) at every point, shape (P, 2)."""

    @abstractmethod
    def target_distance(self, targets: TargetSet, i: int, j: int) -> float:
        """|y_i - y_j| in the metric the cost's Lipschitz constant is measured in."""

    def validate(self, targets: TargetSet):
        for i in range(targets.n - 1):
            if self.target_distance(targets, i, i + 1) == 0:
                raise ValueError(f"Consecutive targets {i} and {i + 1} coincide; D_x c difference vanishes")


@dataclass(frozen=True)
class SquaredDistanceCost(CostSpec):
    """c(x, y) = |x - y|^2 against the planar embedding of the targets."""

    name = "squared_distance"

    def evaluate(self, points, targets, j):
        d = points - targets.embedding[j]
        return d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1]

    def gradient(self, points, targets, idx):
        return 2.0 * (points - targets.embedding[idx])

    def target_distance(self, targets, i, j):
        return float(np.hypot(*(targets.embedding[i] - targets.embedding[j])))


@dataclass(frozen=True)
class BilinearCost(CostSpec):
    """c(x, y) = -x1 * y - x2 * F(y) on the scalar target parameters."""

    F: Callable[[np.ndarray], np.ndarray] = field(default=lambda y: y)
    label: str = "F(y) = y"

    name = "bilinear"

    def F_values(self, targets: TargetSet) -> np.ndarray:
        return np.asarray(self.F(targets.parameters), dtype=float)

    def evaluate(self, points, targets, j):
        y = targets.parameters[j]
        fy = float(self.F(np.asarray([y]))[0])
        return -points[:, 0] * y - points[:, 1] * fy

    def gradient(self, points, targets, idx):
        y = targets.parameters[idx]
        fy = self.F_values(targets)[idx]
        out = np.empty((points.shape[0], 2))
        out[:, 0] = -y
        out[:, 1] = -fy
        return out

    def target_distance(self, targets, i, j):
        return float(abs(targets.parameters[i] - targets.parameters[j]))


def quadratic_F(A: float) -> BilinearCost:
    """Bilinear cost with F(y) = y^2 / A."""
    if A <= 0:
        raise ValueError(f"A must be positive, got {A}")
    return BilinearCost(F=lambda y: np.asarray(y, dtype=float) ** 2 / A, label=f"F(y) = y^2/{A:g}")


# ---------------------------------------------------------------------------
# Cost-difference fields and superlevel sets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DifferenceField:
    """g_i(x) = c(x, y_{i+1}) - c(x, y_i) at the grid midpoints.

    ``spread`` is the range of the linearized field across each cell,
    h1 |d1 g| + h2 |d2 g|, used for boundary-fraction masses.
    """

    index: int
    values: np.ndarray
    spread: np.ndarray
    grid: GridSpec

    @property
    def bracket(self) -> Tuple[float, float]:
        pad = float(self.spread.max()) if self.spread.size else 0.0
        return float(self.values.min()) - pad, float(self.values.max()) + pad


def cost_difference_field(cost: CostSpec, targets: TargetSet, i: int, grid: GridSpec,
                          points: Optional[np.ndarray] = None) -> DifferenceField:
    """g_i = c(., y_{i+1}) - c(., y_i) for the zero-based interface index ``i``."""
    if not 0 <= i <= targets.n - 2:
        raise ValueError(f"Interface index {i} out of range for N = {targets.n}")
    pts = grid.midpoints() if points is None else points
    values = cost.evaluate(pts, targets, i + 1) - cost.evaluate(pts, targets, i)
    size = pts.shape[0]
    grad = (cost.gradient(pts, targets, np.full(size, i + 1))
            - cost.gradient(pts, targets, np.full(size, i)))
    h1, h2 = grid.spacing
    spread = h1 * np.abs(grad[:, 0]) + h2 * np.abs(grad[:, 1])
    return DifferenceField(index=i, values=_readonly(values), spread=_readonly(spread), grid=grid)


def superlevel_mask(field: DifferenceField, k: float) -> np.ndarray:
    """Grid cells with g_i(x) >= k (ties included)."""
    if k == -np.inf:
        return np.ones(field.values.shape, dtype=bool)
    if k == np.inf:
        return np.zeros(field.values.shape, dtype=bool)
    return field.values >= k


def coverage(gap: np.ndarray, spread: np.ndarray) -> np.ndarray:
    """Fraction of each cell where a linear field centred at ``gap`` is >= 0."""
    out = np.where(gap >= 0, 1.0, 0.0)
    live = spread > 0
    if np.any(live):
        out[live] = np.clip(0.5 + gap[live] / spread[live], 0.0, 1.0)
    return out


def superlevel_mass(field: DifferenceField, k: float, density: DensityField) -> float:
    """Boundary-fraction mass of {g_i >= k}; continuous and nonincreasing in k."""
    if k == -np.inf:
        return 1.0
    if k == np.inf:
        return 0.0
    return float(np.dot(density.weights, coverage(field.values - k, field.spread)))
