"""Hedonic pricing: two source densities matched to one free discrete marginal.

Both sides share the cost. Side 1 is tessellated with v and side 2 with
C - v; a solution equalizes the cell masses of the two tessellations.
"""

import logging
import time
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from nested_transport.constants import DEFAULTS
from nested_transport.geometry import CostSpec, DensityField, TargetSet, cost_difference_field
from nested_transport.laguerre import LaguerreEngine, check_nested
from nested_transport.monitor import SolverMonitor
from nested_transport.numerics import NumericsError, ScalarRootConfig, restricted_newton, scalar_root
from nested_transport.schemas import HedonicVerdict, SolveReport, SolveStatus

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class HedonicProblem:
    density1: DensityField
    density2: DensityField
    cost: CostSpec
    targets: TargetSet
    C: float = DEFAULTS["hedonic_c"]

    def __post_init__(self):
        if self.density1.grid != self.density2.grid:
            raise ValueError("Both densities must be normalized on the same grid")

    @property
    def n(self) -> int:
        return self.targets.n

    def engines(self) -> Tuple[LaguerreEngine, LaguerreEngine]:
        first = LaguerreEngine(self.density1, self.cost, self.targets)
        return first, first.with_density(self.density2)


def _side_masses(problem: HedonicProblem, engines, v) -> Tuple[np.ndarray, np.ndarray]:
    e1, e2 = engines
    v = np.asarray(v, dtype=float)
    return e1.masses(v), e2.masses(problem.C - v)


def hedonic_residual(problem: HedonicProblem, v, engines=None) -> np.ndarray:
    """R_i = mu_1(Lag_i(v)) - mu_2(Lag_i(C - v))."""
    engines = engines or problem.engines()
    m1, m2 = _side_masses(problem, engines, v)
    return m1 - m2


def hedonic_nestedness(problem: HedonicProblem, v, engines=None) -> HedonicVerdict:
    e1, e2 = engines or problem.engines()
    v = np.asarray(v, dtype=float)
    side1 = check_nested(e1.tessellate(v))
    side2 = check_nested(e2.tessellate(problem.C - v))
    return HedonicVerdict(hedonically_nested=side1.nested and side2.nested, side1=side1, side2=side2)


def _report(problem: HedonicProblem, engines, method: str, v: Optional[np.ndarray], *, iterations: int,
            damping: int, started: float, status: SolveStatus, message: str,
            evaluations: int = 0, require_nested: bool = False, details: Optional[dict] = None,
            monitor: Optional[SolverMonitor] = None) -> SolveReport:
    details = dict(details or {})
    masses, nested, residual = [], None, None
    if v is not None and np.all(np.isfinite(v)):
        v = np.asarray(v, dtype=float) - v[0]
        m1, m2 = _side_masses(problem, engines, v)
        residual = float(np.max(np.abs(m1 - m2)))
        masses = m1.tolist()
        details["side_mass_gap"] = residual
        nested = hedonic_nestedness(problem, v, engines).hedonically_nested
        if require_nested and not nested:
            status = SolveStatus.NOT_NESTED
            message = "Solution is not hedonically nested" + (f" ({message})" if message else "")
    else:
        v = None

    report = SolveReport(
        method=method, problem="hedonic", n=problem.n, C=problem.C,
        v=[] if v is None else [float(x) for x in v], masses=masses, iterations=iterations,
        damping_steps=damping, evaluations=evaluations, nested=nested, residual_norm=residual,
        wall_time=time.perf_counter() - started, status=status, message=message, details=details,
    )
    if report.succeeded:
        logger.info(f"[hedonic {method}] N={problem.n} iterations={iterations} |R|={residual:.3e}")
    else:
        logger.warning(f"[hedonic {method}] N={problem.n} {report.status.value}: {message}")
    if monitor is not None:
        monitor.log_run(f"hedonic-{method}", report.status.value, {
            "n": problem.n, "iterations": iterations, "damping_steps": damping, "message": message,
        })
    return report


def _start(problem: HedonicProblem, engines, v0, tol: float, label: str) -> np.ndarray:
    """v0 (zeros by default), replaced by the stage construction when a cell is empty on either side."""
    n = problem.n
    v0 = np.zeros(n) if v0 is None else np.asarray(v0, dtype=float)
    if v0.size != n:
        raise ValueError(f"Initial potentials have {v0.size} entries for {n} targets")
    m1, m2 = _side_masses(problem, engines, v0)
    if n > 1 and (np.any(m1 <= 0) or np.any(m2 <= 0)):
        run = _stages(problem, engines, tol, "bisection", check_prefixes=False, label=label)
        if not run.error:
            logger.info(f"[hedonic {label}] empty cells at the initial potentials; starting from the stage solution")
            return run.v
    return v0


def hedonic_newton(problem: HedonicProblem, v0=None, tol: float = DEFAULTS["hedonic_tol"],
                   maxit: int = DEFAULTS["maxit"], damped: bool = False,
                   damping_cap: int = DEFAULTS["damping_cap"],
                   monitor: Optional[SolverMonitor] = None) -> SolveReport:
    """Vector Newton on the hedonic residual; damping keeps both tessellations nested."""
    started = time.perf_counter()
    method = "damped" if damped else "newton"
    engines = problem.engines()
    e1, e2 = engines
    n = problem.n
    v0 = _start(problem, engines, v0, tol, method)

    def residual(v):
        m1, m2 = _side_masses(problem, engines, v)
        if np.any(m1 <= 0) or np.any(m2 <= 0):
            return np.full(n, np.nan)
        return m1 - m2

    accept = None
    if damped:
        def accept(trial):
            if not np.all(np.isfinite(trial)):
                return False
            t1, t2 = e1.tessellate(trial), e2.tessellate(problem.C - trial)
            return (bool(np.all(t1.masses > 0) and np.all(t2.masses > 0))
                    and check_nested(t1).nested and check_nested(t2).nested)

    outcome = restricted_newton(residual, v0, tol=tol, maxit=maxit, accept=accept,
                                damping_cap=damping_cap, label=f"hedonic {method}")
    if outcome.converged:
        status = SolveStatus.SUCCESS
    elif outcome.rejected:
        status = SolveStatus.NOT_NESTED
    else:
        status = SolveStatus.FAILED
    message = outcome.message
    if outcome.rejected:
        message = f"Solution is not hedonically nested ({message})"
    return _report(problem, engines, method, outcome.v, iterations=outcome.iterations,
                   damping=outcome.damping_steps, started=started, status=status, message=message,
                   monitor=monitor)


@dataclass
class _StageRun:
    v: np.ndarray
    stage: int
    evaluations: int = 0
    error: str = ""
    # side whose partial tessellation stopped being nested, 0 when none did
    broken_side: int = 0


def _stage_bracket(engine: LaguerreEngine, j: int, anchor: float) -> Tuple[float, float]:
    diff = cost_difference_field(engine.cost, engine.targets, j - 1, engine.grid, points=engine.points)
    lo, hi = diff.bracket
    return anchor + min(lo, -hi) - 1.0, anchor + max(hi, -lo) + 1.0


def _stages(problem: HedonicProblem, engines, tol: float, mode: str, check_prefixes: bool,
            label: str) -> _StageRun:
    """Equalize cell j - 1 on both sides by choosing v_j, for j = 1..N-1 in turn.

    With ``check_prefixes`` the run stops at the first stage whose partial
    tessellation (targets 0..j) is not nested on one of the sides.
    """
    e1, e2 = engines
    n, C = problem.n, problem.C
    run = _StageRun(v=np.zeros(n), stage=0)
    v = run.v
    top1 = e1.top_two(v[:1], 1)
    top2 = e2.top_two(C - v[:1], 1)

    for j in range(1, n):
        def gap(x, j=j, top1=top1, top2=top2):
            side1 = e1.masses_from(e1.merge(top1, j, x), j + 1)[j - 1]
            side2 = e2.masses_from(e2.merge(top2, j, C - x), j + 1)[j - 1]
            return side1 - side2

        run.stage = j
        try:
            result = scalar_root(gap, ScalarRootConfig(bracket=_stage_bracket(e1, j, v[j - 1]), tol_x=1e-12,
                                                       tol_f=0.1 * tol, mode=mode))
        except NumericsError as e:
            run.error = str(e)
            return run
        run.evaluations += result.evaluations
        v[j] = result.root
        top1 = e1.merge(top1, j, v[j])
        top2 = e2.merge(top2, j, C - v[j])
        logger.debug(f"[hedonic {label}] stage {j}: v={v[j]:.10f} gap={result.value}")
        if check_prefixes and j < n - 1:
            for side, (engine, top) in enumerate(((e1, top1), (e2, top2)), start=1):
                if not engine.prefix_verdict(top, j + 1).nested:
                    run.broken_side = side
                    return run
    return run


def hedonic_nested(problem: HedonicProblem, tol: float = DEFAULTS["hedonic_tol"], inner: str = "bisection",
                   monitor: Optional[SolverMonitor] = None) -> SolveReport:
    """Fix v_1 = 0 and solve mu_1(Lag_i) = mu_2(Lag_i) for v_{i+1}, i = 1..N-1.

    The last cell's equation is never solved; its residual is reported as
    ``details["final_error"]`` and vanishes on hedonically nested solutions.
    The run is labelled nested-newton when the stages use safeguarded Newton,
    and stops as NOT_NESTED as soon as a partial tessellation is not nested.
    """
    started = time.perf_counter()
    method = "nested-newton" if inner == "newton" else "nested-bisection"
    mode = "safeguarded_newton" if inner == "newton" else "bisection"
    engines = problem.engines()
    n = problem.n
    run = _stages(problem, engines, tol, mode, check_prefixes=True, label=method)

    if run.error:
        return _report(problem, engines, method, None, iterations=run.stage, damping=0, started=started,
                       status=SolveStatus.FAILED, evaluations=run.evaluations,
                       message=f"Stage {run.stage}: {run.error}; configuration is likely not hedonically nested",
                       monitor=monitor)
    if run.broken_side:
        return _report(problem, engines, method, None, iterations=run.stage, damping=0, started=started,
                       status=SolveStatus.NOT_NESTED, evaluations=run.evaluations,
                       message=(f"Not hedonically nested: side {run.broken_side} stops being nested "
                                f"at stage {run.stage}"),
                       details={"abort_stage": float(run.stage), "abort_side": float(run.broken_side)},
                       monitor=monitor)

    v = run.v
    R = hedonic_residual(problem, v, engines)
    final_error = float(R[-1])
    converged = float(np.max(np.abs(R))) <= 10.0 * tol
    status = SolveStatus.SUCCESS if converged else SolveStatus.FAILED
    message = "" if converged else f"Residual {np.max(np.abs(R)):.3e} above tolerance"
    return _report(problem, engines, method, v, iterations=n - 1, damping=0, started=started, status=status,
                   message=message, evaluations=run.evaluations, require_nested=True,
                   details={"final_error": final_error}, monitor=monitor)
