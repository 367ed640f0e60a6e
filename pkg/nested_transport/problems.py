"""Turns a RunConfig into densities, costs and targets."""

import logging
from typing import Tuple

import numpy as np

from nested_transport.constants import DEFAULTS
from nested_transport.geometry import (
    BilinearCost,
    CostSpec,
    DensityField,
    GridSpec,
    SquaredDistanceCost,
    TargetSet,
    build_density,
    curve_points,
    quadratic_F,
)
from nested_transport.schemas import RunConfig
from nested_transport.solvers.hedonic import HedonicProblem

logger = logging.getLogger(__name__)


def build_grid(config: RunConfig) -> GridSpec:
    return GridSpec(bounds=tuple(DEFAULTS["bounds"]), resolution=config.grid)


def build_targets(config: RunConfig) -> TargetSet:
    if config.A is not None:
        # Equispaced y_i = i / N on the parabola y^2 / A.
        t = np.arange(1, config.n + 1) / config.n
        return TargetSet.explicit(t, np.column_stack([t, t ** 2 / config.A]))
    if config.example == "explicit":
        t = np.asarray(config.parameters, dtype=float)
        if config.embedding is not None:
            return TargetSet.explicit(t, np.asarray(config.embedding, dtype=float))
        if config.cost == "squared_distance":
            raise ValueError("Explicit targets under the squared distance need an `embedding`")
        return TargetSet.explicit(t)
    return TargetSet.from_family(config.example, config.n)


def build_cost(config: RunConfig) -> CostSpec:
    if config.cost == "squared_distance" and config.A is None:
        return SquaredDistanceCost()
    if config.A is not None:
        return quadratic_F(config.A)
    if config.example == "E3":
        raise ValueError("The quarter circle is not a graph over its parameter; use the squared distance")
    if config.example == "explicit":
        return BilinearCost()
    family = config.example
    return BilinearCost(F=lambda y: curve_points(family, np.atleast_1d(y))[:, 1], label=f"{family} profile")


def build_congestion(config: RunConfig) -> Tuple[DensityField, CostSpec, TargetSet]:
    grid = build_grid(config)
    targets = build_targets(config)
    cost = build_cost(config)
    cost.validate(targets)
    logger.debug(f"[problems] {config.example} N={targets.n} M={grid.resolution} cost={cost.name}")
    return build_density(grid, config.measure), cost, targets


def build_hedonic(config: RunConfig) -> HedonicProblem:
    density1, cost, targets = build_congestion(config)
    density2 = build_density(density1.grid, config.measure2)
    return HedonicProblem(density1=density1, density2=density2, cost=cost, targets=targets, C=config.C)
