import logging
import traceback
from dataclasses import dataclass
from typing import Optional

from nested_transport.laguerre import LaguerreEngine, check_nested
from nested_transport.monitor import SolverMonitor
from nested_transport.problems import build_congestion, build_hedonic
from nested_transport.schemas import NestedVerdict, RunConfig, SolveReport, SolveStatus
from nested_transport.solvers.congestion import (
    InternalEnergy,
    nested_bisection,
    nested_newton,
    newton_damped,
    newton_standard,
)
from nested_transport.solvers.hedonic import HedonicProblem, hedonic_nested, hedonic_newton

logger = logging.getLogger(__name__)


@dataclass
class SolvedRun:
    """A report plus whatever is needed to draw or check its tessellations."""
    config: RunConfig
    report: SolveReport
    engine: Optional[LaguerreEngine] = None
    hedonic: Optional[HedonicProblem] = None

    def tessellations(self):
        """The solved tessellation(s): one for congestion, two for hedonic; empty without potentials."""
        if not self.report.v:
            return []
        if self.hedonic is not None:
            e1, e2 = self.hedonic.engines()
            v = self.report.v
            return [e1.tessellate(v), e2.tessellate([self.hedonic.C - x for x in v])]
        return [self.engine.tessellate(self.report.v)]


class SolverRouter:
    """Dispatches a RunConfig to the solver its method names.

    Solver failures come back as reports; unexpected exceptions are turned
    into FAILED reports and logged to the monitor.
    """

    def __init__(self, monitor: Optional[SolverMonitor] = None):
        self.monitor = monitor or SolverMonitor()

    def _congestion(self, config: RunConfig) -> SolvedRun:
        density, cost, targets = build_congestion(config)
        engine = LaguerreEngine(density, cost, targets)
        common = dict(tol=config.tol, maxit=config.maxit, monitor=self.monitor, engine=engine,
                      energy=InternalEnergy(weight=config.energy_weight))
        if config.method == "newton":
            report = newton_standard(density, cost, targets, **common)
        elif config.method == "damped":
            report = newton_damped(density, cost, targets, **common)
        elif config.method == "nested-bisection":
            report = nested_bisection(density, cost, targets, C_interval=config.C_interval,
                                      inner=config.inner, **common)
        elif config.method == "nested-theoretical":
            report = nested_bisection(density, cost, targets, C_interval=config.C_interval,
                                      error="theoretical", **common)
        elif config.method == "nested-newton":
            report = nested_newton(density, cost, targets, C0=config.C0, inner=config.inner, **common)
        else:
            raise ValueError(f"Method {config.method} not supported")
        return SolvedRun(config=config, report=report, engine=engine)

    def _hedonic(self, config: RunConfig) -> SolvedRun:
        problem = build_hedonic(config)
        if config.method in ("newton", "damped"):
            report = hedonic_newton(problem, tol=config.tol, maxit=config.maxit,
                                    damped=config.method == "damped", monitor=self.monitor)
        elif config.method in ("nested-bisection", "nested-newton"):
            # nested-newton is the stage solve with safeguarded Newton as the inner root finder
            inner = "newton" if config.method == "nested-newton" else config.inner
            report = hedonic_nested(problem, tol=config.tol, inner=inner, monitor=self.monitor)
        else:
            raise ValueError(f"Method {config.method} not supported for hedonic problems")
        return SolvedRun(config=config, report=report, hedonic=problem)

    def run(self, config: RunConfig) -> SolvedRun:
        try:
            if config.problem == "hedonic":
                return self._hedonic(config)
            return self._congestion(config)
        except Exception as e:
            logger.error(f"[SolverRouter] {config.method} on {config.example} N={config.n}: {e}")
            logger.debug(traceback.format_exc())
            self.monitor.log_error(config.method, str(e), {"example": config.example, "n": config.n})
            report = SolveReport(method=config.method, problem=config.problem, n=config.n,
                                 status=SolveStatus.FAILED, message=str(e))
            return SolvedRun(config=config, report=report)

    def check(self, config: RunConfig) -> NestedVerdict:
        """Solve, then run the adjacency check on every solved tessellation.

        Falls back to standard Newton when the configured method leaves no potentials.
        """
        solved = self.run(config)
        tessellations = solved.tessellations()
        if not tessellations and config.method != "newton":
            logger.info(f"[SolverRouter] {config.method} left no potentials; checking the Newton solution")
            solved = self.run(config.model_copy(update={"method": "newton"}))
            tessellations = solved.tessellations()
        if not tessellations:
            raise ValueError(f"No potentials to check: {solved.report.message}")
        verdicts = [check_nested(t) for t in tessellations]
        if len(verdicts) == 1:
            return verdicts[0]
        return NestedVerdict(
            nested=all(v.nested for v in verdicts),
            violations=[pair for v in verdicts for pair in v.violations][:1000],
            violation_count=sum(v.violation_count for v in verdicts),
            present_labels=verdicts[0].present_labels,
        )

