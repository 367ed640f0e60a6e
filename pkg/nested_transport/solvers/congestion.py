"""Optimal transport with an entropy congestion term.

Minimizes W_c(mu, nu) + w sum_i nu_i ln nu_i over discrete nu. Optimality
reads v_i + w ln(nu_i) = C with nu_i the mass of the i-th Laguerre cell;
the weight w is carried by ``InternalEnergy`` and defaults to one.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.special import xlogy

from nested_transport.constants import DEFAULTS
from nested_transport.geometry import (
    CostSpec,
    DensityField,
    GridSpec,
    TargetSet,
    cost_difference_field,
    superlevel_mass,
)
from nested_transport.laguerre import LaguerreEngine, Potentials, Tessellation, check_nested, transport_cost
from nested_transport.monitor import SolverMonitor
from nested_transport.nest_analysis import (
    difference_fields,
    entropy_J,
    k_max,
    level_for_mass,
    lipschitz_Mc,
    splitting_levels,
)
from nested_transport.numerics import (
    EPS_CBRT,
    NumericsError,
    ScalarRootConfig,
    restricted_newton,
    scalar_root,
)
from nested_transport.schemas import SolveReport, SolveStatus

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class InternalEnergy:
    """f(s) = weight * s ln s; f' and its inverse drop the additive constant.

    Scaling the entropy by ``weight`` is the same as dividing the cost by it,
    so potentials and C scale with the weight.
    """

    name: str = "entropy"
    weight: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.weight) and self.weight > 0):
            raise ValueError(f"Energy weight must be positive and finite, got {self.weight}")

    def f(self, s):
        return self.weight * xlogy(s, s)

    def f_prime(self, s):
        return self.weight * np.log(s)

    def f_prime_inverse(self, t):
        return np.exp(np.asarray(t, dtype=float) / self.weight)

    def energy(self, nu) -> float:
        return math.fsum(self.f(np.asarray(nu, dtype=float)))

    def prescribed(self, C: float, v) -> np.ndarray:
        """Masses (f')^{-1}(C - v_i) that optimality asks of each cell."""
        return self.f_prime_inverse(C - np.asarray(v, dtype=float))

    def prescribed_one(self, C: float, vi: float) -> float:
        return math.exp((C - vi) / self.weight)

    def shares(self, v) -> np.ndarray:
        """Optimal weights for potentials v, normalized to sum to one."""
        return softmin_weights(np.asarray(v, dtype=float) / self.weight)

    def constant(self, v) -> float:
        """The C making the prescribed masses of v sum to one."""
        return self.weight * entropy_J(np.asarray(v, dtype=float) / self.weight)


ENTROPY = InternalEnergy()


def softmin_weights(v: np.ndarray) -> np.ndarray:
    z = -np.asarray(v, dtype=float)
    w = np.exp(z - z.max())
    return w / w.sum()


def _engine(density, cost, targets, engine: Optional[LaguerreEngine]) -> LaguerreEngine:
    return engine if engine is not None else LaguerreEngine(density, cost, targets)


def residual_G(density: DensityField, cost: CostSpec, targets: TargetSet, v,
               engine: Optional[LaguerreEngine] = None, energy: InternalEnergy = ENTROPY) -> np.ndarray:
    """mu(Lag_i(v)) - e^{-v_i} / sum_k e^{-v_k} (exponents divided by the energy weight)."""
    engine = _engine(density, cost, targets, engine)
    return engine.masses(v) - energy.shares(v)


def residual_H(density: DensityField, cost: CostSpec, targets: TargetSet, v, C: float,
               engine: Optional[LaguerreEngine] = None, energy: InternalEnergy = ENTROPY) -> np.ndarray:
    """mu(Lag_i(v)) - (f')^{-1}(C - v_i), which is e^{C - v_i} for the entropy."""
    engine = _engine(density, cost, targets, engine)
    v = np.asarray(v, dtype=float)
    return engine.masses(v) - energy.prescribed(C, v)


def _tolerance(tol: float, engine: LaguerreEngine, quadrature_floor: bool) -> float:
    if not quadrature_floor:
        return tol
    return max(tol, 2.0 * engine.n / engine.grid.resolution ** 2)


def _first_order_gap(v: np.ndarray, masses: np.ndarray, C: float, energy: InternalEnergy) -> float:
    if np.any(masses <= 0):
        return math.inf
    return float(np.max(np.abs(v + energy.f_prime(masses) - C)))


def _finish(engine: LaguerreEngine, method: str, v: Optional[np.ndarray], C: Optional[float], *,
            iterations: int, damping: int = 0, evaluations: int = 0, started: float,
            status: SolveStatus, message: str = "", require_nested: bool = False,
            details: Optional[dict] = None, monitor: Optional[SolverMonitor] = None,
            energy: InternalEnergy = ENTROPY) -> SolveReport:
    masses: List[float] = []
    nested = None
    residual = None
    details = dict(details or {})
    if v is not None and np.all(np.isfinite(v)) and (C is None or np.isfinite(C)):
        pot = Potentials(v, C).normalized()
        if pot.C is None:
            pot = Potentials(pot.v, energy.constant(pot.v))
        tess = engine.tessellate(pot)
        nested = check_nested(tess).nested
        residual = float(np.max(np.abs(tess.masses - energy.prescribed(pot.C, pot.v))))
        masses = tess.masses.tolist()
        details["first_order_gap"] = _first_order_gap(pot.v, tess.masses, pot.C, energy)
        if energy != ENTROPY:
            details["energy_weight"] = energy.weight
        v, C = pot.v, pot.C
        if require_nested and not nested and status == SolveStatus.SUCCESS:
            status, message = SolveStatus.NOT_NESTED, "Solution is not nested"
    else:
        v, C = None, None

    report = SolveReport(
        method=method, problem="congestion", n=engine.n, C=C,
        v=[] if v is None else [float(x) for x in v], masses=masses,
        iterations=iterations, damping_steps=damping, evaluations=evaluations, nested=nested,
        residual_norm=residual, wall_time=time.perf_counter() - started, status=status,
        message=message, details=details,
    )
    if report.succeeded:
        logger.info(f"[{method}] N={engine.n} C={C:.6f} iterations={iterations} damping={damping}")
    else:
        logger.warning(f"[{method}] N={engine.n} {report.status.value}: {message}")
    if monitor is not None:
        monitor.log_run(method, report.status.value, {
            "n": engine.n, "C": C, "iterations": iterations, "damping_steps": damping, "message": message,
        })
    return report


# ---------------------------------------------------------------------------
# Vector Newton
# ---------------------------------------------------------------------------

def splitting_start(density: DensityField, cost: CostSpec, targets: TargetSet, nu=None,
                    fields=None) -> np.ndarray:
    """Potentials whose nested tessellation gives cell i the mass nu_i (equal masses by default)."""
    n = targets.n
    nu = np.full(n, 1.0 / n) if nu is None else np.asarray(nu, dtype=float)
    return splitting_levels(density, cost, targets, nu, fields).potentials()


def _start(engine: LaguerreEngine, v0, label: str) -> np.ndarray:
    """v0 (zeros by default), replaced by the equal-mass splitting start when it leaves a cell empty."""
    n = engine.n
    v0 = np.zeros(n) if v0 is None else np.asarray(v0, dtype=float)
    if v0.size != n:
        raise ValueError(f"Initial potentials have {v0.size} entries for {n} targets")
    empty = np.flatnonzero(engine.masses(v0) <= 0)
    if n > 1 and empty.size:
        start = splitting_start(engine.density, engine.cost, engine.targets)
        if np.all(np.isfinite(start)):
            logger.info(f"[{label}] {empty.size} empty cells at the initial potentials; "
                        f"starting from equal-mass splitting levels")
            return start
    return v0


def _newton(density, cost, targets, v0, tol, maxit, damped, damping_cap, quadrature_floor, monitor, engine,
            energy):
    started = time.perf_counter()
    method = "damped" if damped else "newton"
    engine = _engine(density, cost, targets, engine)
    n = engine.n
    v0 = _start(engine, v0, method)

    def residual(v):
        masses = engine.masses(v)
        # G is only defined while every Laguerre cell carries mass.
        if np.any(masses <= 0):
            return np.full(n, np.nan)
        return masses - energy.shares(v)

    accept = None
    if damped:
        def accept(trial):
            if not np.all(np.isfinite(trial)):
                return False
            tess = engine.tessellate(trial)
            return bool(np.all(tess.masses > 0)) and check_nested(tess).nested

    outcome = restricted_newton(
        residual, v0,
        tol=_tolerance(tol, engine, quadrature_floor), maxit=maxit, accept=accept,
        damping_cap=damping_cap, label=method,
    )
    status = SolveStatus.SUCCESS if outcome.converged else SolveStatus.FAILED
    v = outcome.v if outcome.converged or np.all(np.isfinite(outcome.v)) else None
    return _finish(engine, method, v, None, iterations=outcome.iterations, damping=outcome.damping_steps,
                   started=started, status=status, message=outcome.message, monitor=monitor, energy=energy)


def newton_standard(density: DensityField, cost: CostSpec, targets: TargetSet, v0=None,
                    tol: float = DEFAULTS["congestion_tol"], maxit: int = DEFAULTS["maxit"],
                    quadrature_floor: bool = False, monitor: Optional[SolverMonitor] = None,
                    engine: Optional[LaguerreEngine] = None, energy: InternalEnergy = ENTROPY) -> SolveReport:
    """Newton on G with a finite-difference Jacobian restricted to 1-perp."""
    return _newton(density, cost, targets, v0, tol, maxit, False, DEFAULTS["damping_cap"],
                   quadrature_floor, monitor, engine, energy)


def newton_damped(density: DensityField, cost: CostSpec, targets: TargetSet, v0=None,
                  tol: float = DEFAULTS["congestion_tol"], maxit: int = DEFAULTS["maxit"],
                  damping_cap: int = DEFAULTS["damping_cap"], quadrature_floor: bool = False,
                  monitor: Optional[SolverMonitor] = None,
                  engine: Optional[LaguerreEngine] = None, energy: InternalEnergy = ENTROPY) -> SolveReport:
    """Newton on G, halving each step until the trial tessellation is nested."""
    return _newton(density, cost, targets, v0, tol, maxit, True, damping_cap, quadrature_floor, monitor, engine,
                   energy)


# ---------------------------------------------------------------------------
# Sequential construction for a fixed C
# ---------------------------------------------------------------------------

@dataclass
class ErrorEvaluation:
    C: float
    value: Optional[float]
    v: np.ndarray
    masses: np.ndarray
    stage: int
    evaluations: int = 0
    max_stage_drift: float = 0.0

    @property
    def feasible(self) -> bool:
        return self.value is not None and math.isfinite(self.value)

    @property
    def nested_consistent(self) -> bool:
        return self.max_stage_drift <= 1e-6


def _stage_bracket(engine: LaguerreEngine, j: int, anchor: float) -> Tuple[float, float]:
    diff = cost_difference_field(engine.cost, engine.targets, j - 1, engine.grid, points=engine.points)
    lo, hi = diff.bracket
    return anchor + lo - 1.0, anchor + hi + 1.0


def error_func(density: DensityField, cost: CostSpec, targets: TargetSet, C: float,
               inner: str = "bisection", engine: Optional[LaguerreEngine] = None,
               tol_x: float = DEFAULTS["scalar_tol_x"], energy: InternalEnergy = ENTROPY) -> ErrorEvaluation:
    """Fix v_1 = 0, solve mu(Lag_{j-1}) = (f')^{-1}(C - v_{j-1}) for v_j in turn, return the last cell's defect.

    ``value`` is None when some stage cannot carry its prescribed mass.
    """
    engine = _engine(density, cost, targets, engine)
    n = engine.n
    v = np.zeros(n)
    mode = "safeguarded_newton" if inner == "newton" else "bisection"
    if n == 1:
        return ErrorEvaluation(C, 1.0 - energy.prescribed_one(C, 0.0), v, np.ones(1), 0)

    top = engine.top_two(v[:1], 1)
    masses = np.ones(1)
    evaluations = 0
    drift = 0.0
    for j in range(1, n):
        need = energy.prescribed_one(C, v[j - 1])

        def defect(x, j=j, top=top, need=need):
            return engine.masses_from(engine.merge(top, j, x), j + 1)[j - 1] - need

        try:
            result = scalar_root(defect, ScalarRootConfig(bracket=_stage_bracket(engine, j, v[j - 1]),
                                                          tol_x=tol_x, mode=mode))
        except NumericsError:
            logger.debug(f"[error_func] C={C:.6f}: stage {j} has no root")
            return ErrorEvaluation(C, None, v, masses, j, evaluations, drift)
        evaluations += result.evaluations
        v[j] = result.root
        top = engine.merge(top, j, v[j])
        masses = engine.masses_from(top, j + 1)
        if j >= 2:
            drift = max(drift, float(np.max(np.abs(masses[:j - 1] - energy.prescribed(C, v[:j - 1])))))
        if j < n - 1 and energy.prescribed_one(C, v[j]) - masses[j] > 0:
            logger.debug(f"[error_func] C={C:.6f}: infeasible at stage {j}")
            return ErrorEvaluation(C, None, v, masses, j, evaluations, drift)

    value = float(masses[n - 1] - energy.prescribed_one(C, v[n - 1]))
    return ErrorEvaluation(C, value, v, masses, n - 1, evaluations, drift)


@dataclass
class TheoreticalConstruction:
    C: float
    value: float
    v: np.ndarray
    masses: np.ndarray
    levels: np.ndarray
    clamped: List[bool] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return math.isfinite(self.value)


def theoretical_h(density: DensityField, cost: CostSpec, targets: TargetSet, C: float,
                  fields=None, energy: InternalEnergy = ENTROPY) -> TheoreticalConstruction:
    """Forward superlevel-set construction with levels clamped at k_max.

    Returns h(C) = 1 - mu(X_>=(y_{N-1}, k_{N-1})) - (f')^{-1}(C - v_N), or -inf when
    the mass runs out before the last index.
    """
    n = targets.n
    v = np.zeros(n)
    levels = np.full(max(n - 1, 0), np.nan)
    clamped: List[bool] = []
    if n == 1:
        return TheoreticalConstruction(C, 1.0 - energy.prescribed_one(C, 0.0), v, np.ones(1), levels, clamped)

    fields = fields or difference_fields(density, cost, targets)
    cumulative = np.zeros(n - 1)

    def out_of_mass(stage):
        return TheoreticalConstruction(C, -math.inf, v, _masses_from_cumulative(cumulative[:stage]), levels, clamped)

    first = energy.prescribed_one(C, 0.0)
    if first >= 1.0:
        return out_of_mass(0)
    levels[0] = level_for_mass(fields[0], density, first)
    if not math.isfinite(levels[0]):
        return out_of_mass(0)
    cumulative[0] = superlevel_mass(fields[0], levels[0], density)
    clamped.append(False)
    for i in range(1, n - 1):
        v[i] = v[i - 1] + levels[i - 1]
        need = energy.prescribed_one(C, v[i])
        if 1.0 - cumulative[i - 1] < need:
            return out_of_mass(i)
        k_bar = level_for_mass(fields[i], density, cumulative[i - 1] + need)
        k_cap = k_max(density, cost, targets, i - 1, levels[i - 1], fields)
        clamped.append(not k_bar < k_cap)
        levels[i] = k_bar if k_bar < k_cap else k_cap
        if not math.isfinite(levels[i]):
            return out_of_mass(i)
        cumulative[i] = superlevel_mass(fields[i], levels[i], density)
    v[n - 1] = v[n - 2] + levels[n - 2]
    value = 1.0 - cumulative[n - 2] - energy.prescribed_one(C, v[n - 1])
    return TheoreticalConstruction(C, float(value), v, _masses_from_cumulative(cumulative, total=True),
                                   levels, clamped)


def _masses_from_cumulative(cumulative: np.ndarray, total: bool = False) -> np.ndarray:
    edges = np.concatenate([[0.0], cumulative, [1.0]]) if total else np.concatenate([[0.0], cumulative])
    return np.diff(edges)


# ---------------------------------------------------------------------------
# Outer searches on C
# ---------------------------------------------------------------------------

def _default_interval(n: int, energy: InternalEnergy = ENTROPY) -> Tuple[float, float]:
    key = "c_interval_large_n" if n >= DEFAULTS["large_n"] else "c_interval"
    lo, hi = DEFAULTS[key]
    return energy.weight * float(lo), energy.weight * float(hi)


def _default_c0(n: int, energy: InternalEnergy = ENTROPY) -> float:
    return energy.weight * float(DEFAULTS["c0_large_n"] if n >= DEFAULTS["large_n"] else DEFAULTS["c0"])


def _evaluator(density, cost, targets, engine, error: str, inner: str, energy: InternalEnergy = ENTROPY) -> Callable:
    if error == "theoretical":
        fields = difference_fields(density, cost, targets)
        return lambda C: theoretical_h(density, cost, targets, C, fields, energy)
    if error != "sequential":
        raise ValueError(f"Unknown error function '{error}'; expected 'sequential' or 'theoretical'")
    return lambda C: error_func(density, cost, targets, C, inner=inner, engine=engine, energy=energy)


def _stage_details(ev) -> dict:
    drift = getattr(ev, "max_stage_drift", None)
    if drift is None:
        return {}
    return {"max_stage_drift": float(drift), "nested_consistent": 1.0 if ev.nested_consistent else 0.0}


def _unresolved(engine, method, last, iterations, evaluations, started, message, monitor, energy=ENTROPY):
    """Failure report; NOT_NESTED when the last constructed potentials are non-nested."""
    status = SolveStatus.FAILED
    if last is not None and not check_nested(engine.tessellate(last.v)).nested:
        status, message = SolveStatus.NOT_NESTED, f"Solution is not nested ({message})"
    v = None if last is None else last.v
    return _finish(engine, method, v, None if last is None else last.C, iterations=iterations,
                   evaluations=evaluations, started=started, status=status, message=message, monitor=monitor,
                   energy=energy)


def nested_bisection(density: DensityField, cost: CostSpec, targets: TargetSet,
                     C_interval: Optional[Tuple[float, float]] = None,
                     tol: float = DEFAULTS["congestion_tol"], maxit: int = DEFAULTS["nested_maxit"],
                     error: str = "sequential", inner: str = "bisection",
                     monitor: Optional[SolverMonitor] = None,
                     engine: Optional[LaguerreEngine] = None, energy: InternalEnergy = ENTROPY) -> SolveReport:
    """Bisection on C: positive error raises the lower end, negative or infeasible lowers the upper end."""
    started = time.perf_counter()
    method = "nested-theoretical" if error == "theoretical" else "nested-bisection"
    engine = _engine(density, cost, targets, engine)
    if engine.n == 1:
        return _finish(engine, method, np.zeros(1), 0.0, iterations=0, started=started,
                       status=SolveStatus.SUCCESS, monitor=monitor, energy=energy)
    lo, hi = C_interval if C_interval is not None else _default_interval(engine.n, energy)
    if not lo < hi:
        raise ValueError(f"C interval must be increasing, got {(lo, hi)}")
    evaluate = _evaluator(density, cost, targets, engine, error, inner, energy)

    last = None
    for it in range(1, maxit + 1):
        C = 0.5 * (lo + hi)
        ev = evaluate(C)
        logger.debug(f"[{method}] iteration {it}: C={C:.8f} error={ev.value if ev.feasible else 'infeasible'}")
        if ev.feasible:
            last = ev
            if abs(ev.value) <= tol:
                return _finish(engine, method, ev.v, C, iterations=it, evaluations=it, started=started,
                               status=SolveStatus.SUCCESS, require_nested=True, details=_stage_details(ev),
                               monitor=monitor, energy=energy)
        if ev.feasible and ev.value > 0:
            lo = C
        else:
            hi = C
    return _unresolved(engine, method, last, maxit, maxit, started,
                       f"No root in C interval after {maxit} bisections", monitor, energy)


def nested_newton(density: DensityField, cost: CostSpec, targets: TargetSet, C0: Optional[float] = None,
                  tol: float = DEFAULTS["congestion_tol"], maxit: int = DEFAULTS["nested_maxit"],
                  inner: str = "bisection", monitor: Optional[SolverMonitor] = None,
                  engine: Optional[LaguerreEngine] = None, energy: InternalEnergy = ENTROPY) -> SolveReport:
    """1-D Newton on the sequential error with a centered difference of step eps^(1/3).

    Steps are halved while the trial C is nonnegative or infeasible.
    """
    started = time.perf_counter()
    method = "nested-newton"
    engine = _engine(density, cost, targets, engine)
    if engine.n == 1:
        return _finish(engine, method, np.zeros(1), 0.0, iterations=0, started=started,
                       status=SolveStatus.SUCCESS, monitor=monitor, energy=energy)
    evaluate = _evaluator(density, cost, targets, engine, "sequential", inner, energy)
    C = _default_c0(engine.n, energy) if C0 is None else float(C0)
    ev = evaluate(C)
    evaluations = 1
    if not ev.feasible:
        return _unresolved(engine, method, None, 0, evaluations, started,
                           f"Initial C={C:.6g} is infeasible", monitor, energy)

    h = EPS_CBRT
    for it in range(maxit + 1):
        if abs(ev.value) <= tol:
            return _finish(engine, method, ev.v, C, iterations=it, evaluations=evaluations, started=started,
                           status=SolveStatus.SUCCESS, require_nested=True, details=_stage_details(ev),
                           monitor=monitor, energy=energy)
        if it == maxit:
            break
        plus, minus = evaluate(C + h), evaluate(C - h)
        evaluations += 2
        if not (plus.feasible and minus.feasible):
            return _unresolved(engine, method, ev, it, evaluations, started,
                               f"Non-finite derivative at C={C:.6g}", monitor, energy)
        slope = (plus.value - minus.value) / (2.0 * h)
        if slope == 0 or not math.isfinite(slope):
            return _unresolved(engine, method, ev, it, evaluations, started,
                               f"Non-finite derivative at C={C:.6g}", monitor, energy)
        step = -ev.value / slope
        halvings = 0
        while C + step >= 0 and halvings < DEFAULTS["nested_maxit"]:
            step *= 0.5
            halvings += 1
        trial = evaluate(C + step)
        evaluations += 1
        while not trial.feasible and halvings < DEFAULTS["nested_maxit"]:
            step *= 0.5
            halvings += 1
            trial = evaluate(C + step)
            evaluations += 1
        if not trial.feasible:
            return _unresolved(engine, method, ev, it + 1, evaluations, started,
                               "Step halving did not reach a feasible C", monitor, energy)
        C, ev = C + step, trial
        logger.debug(f"[{method}] iteration {it + 1}: C={C:.8f} error={ev.value:.3e} halvings={halvings}")
    return _unresolved(engine, method, ev, maxit, evaluations, started,
                       f"No convergence in {maxit} iterations", monitor, energy)


# ---------------------------------------------------------------------------
# Bounds and objective
# ---------------------------------------------------------------------------

def c_search_bounds(cost: CostSpec, targets: TargetSet, grid: GridSpec,
                    energy: InternalEnergy = ENTROPY) -> Tuple[float, float]:
    """Interval guaranteed to contain the optimal C.

    A weighted entropy is the plain entropy under the cost divided by the
    weight, so the bounds for weight one are computed on that cost and scaled.
    """
    if targets.n < 2:
        raise ValueError("C bounds need at least two targets")
    Mc = lipschitz_Mc(cost, targets, grid) / energy.weight
    d = Mc * np.array([cost.target_distance(targets, i, 0) for i in range(targets.n)])
    a = float(d[1])
    return energy.weight * (entropy_J(-d) - a), energy.weight * (entropy_J(d) + a)


def objective_value(density: DensityField, cost: CostSpec, targets: TargetSet, nu,
                    tessellation: Tessellation, energy: InternalEnergy = ENTROPY) -> float:
    """Transport cost of the tessellation plus sum_i nu_i ln nu_i."""
    nu = np.asarray(nu, dtype=float)
    if nu.size != targets.n:
        raise ValueError(f"Weight vector has {nu.size} entries for {targets.n} targets")
    return transport_cost(tessellation, cost) + energy.energy(nu)
