"""Methods x N benchmark matrix and the Error(C) sweep."""

import asyncio
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from nested_transport.export import error_curve_to_frame, reports_to_frame, write_reports_csv
from nested_transport.laguerre import LaguerreEngine
from nested_transport.problems import build_congestion
from nested_transport.schemas import BenchmarkConfig, RunConfig, SolveReport, SolveStatus
from nested_transport.solvers.congestion import InternalEnergy, error_func
from nested_transport.cli.router import SolverRouter

logger = logging.getLogger(__name__)


class BenchmarkRunner:
    """Runs every (method, N) cell of a BenchmarkConfig in a worker pool.

    Rows come back in method-major order whatever the completion order, and
    a failing cell is recorded as a FAILED row instead of stopping the matrix.
    """

    def __init__(self, config: BenchmarkConfig, router: Optional[SolverRouter] = None):
        self.config = config
        self.router = router or SolverRouter()

    def _solve(self, cell: RunConfig) -> SolveReport:
        return self.router.run(cell).report

    async def _run_cells(self, cells: List[RunConfig]) -> List[SolveReport]:
        loop = asyncio.get_running_loop()
        progress = tqdm(total=len(cells), desc="benchmark", disable=not cells)
        with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
            async def one(cell):
                try:
                    return await loop.run_in_executor(pool, self._solve, cell)
                finally:
                    progress.update(1)

            results = await asyncio.gather(*(one(c) for c in cells), return_exceptions=True)
        progress.close()

        reports = []
        for cell, result in zip(cells, results):
            if isinstance(result, Exception):
                logger.error(f"[benchmark] {cell.method} N={cell.n}: {result}")
                result = SolveReport(method=cell.method, problem=cell.problem, n=cell.n,
                                     status=SolveStatus.FAILED, message=str(result))
            reports.append(result)
        return reports

    def run(self) -> pd.DataFrame:
        reports = asyncio.run(self._run_cells(self.config.cells()))
        if self.config.output:
            return write_reports_csv(reports, self.config.output, self.config.record_timing)
        return reports_to_frame(reports, self.config.record_timing)


def run_benchmark(config: BenchmarkConfig, router: Optional[SolverRouter] = None) -> pd.DataFrame:
    return BenchmarkRunner(config, router).run()


def sweep_error_curve(config: RunConfig, C_grid: Sequence[float]):
    """Error(C) over a grid of C values with the constructed masses per point.

    Returns the frame (C, error or INFEASIBLE, nu_1..nu_N) and the raw evaluations.
    """
    if config.problem != "congestion":
        raise ValueError("The error curve is defined for congestion problems only")
    density, cost, targets = build_congestion(config)
    engine = LaguerreEngine(density, cost, targets)
    energy = InternalEnergy(weight=config.energy_weight)
    evaluations = []
    for C in tqdm(np.asarray(C_grid, dtype=float), desc="sweep", disable=len(C_grid) < 2):
        evaluations.append(error_func(density, cost, targets, float(C), inner=config.inner, engine=engine,
                                       energy=energy))
    infeasible = sum(not ev.feasible for ev in evaluations)
    logger.info(f"[sweep] {config.example} N={targets.n}: {len(evaluations)} points, {infeasible} infeasible")
    return error_curve_to_frame(evaluations, targets.n), evaluations
