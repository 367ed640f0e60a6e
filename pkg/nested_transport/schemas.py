import logging
from datetime import datetime
from enum import Enum
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, model_validator

from nested_transport.constants import DEFAULTS, default_grid_resolution

logger = logging.getLogger(__name__)

ExampleName = Literal["E1", "E2", "E3", "E4", "curve-x^1.5", "explicit"]
MeasureName = Literal["uniform", "product_xy"]
MethodName = Literal["newton", "damped", "nested-bisection", "nested-newton", "nested-theoretical"]


class SolveStatus(str, Enum):
    SUCCESS = "SUCCESS"
    FAILED = "FAILED"
    NOT_NESTED = "NOT_NESTED"


class SolveReport(BaseModel):
    """Outcome of one solver run; failures are reported, never raised."""
    method: str
    problem: str = "congestion"
    n: int
    C: Optional[float] = None
    v: List[float] = Field(default_factory=list)
    masses: List[float] = Field(default_factory=list)
    iterations: int = 0
    damping_steps: int = 0
    evaluations: int = 0
    nested: Optional[bool] = None
    residual_norm: Optional[float] = None
    wall_time: float = 0.0
    status: SolveStatus = SolveStatus.SUCCESS
    message: str = ""
    details: Dict[str, float] = Field(default_factory=dict)
    timestamp: datetime = Field(default_factory=datetime.now)

    @property
    def succeeded(self) -> bool:
        return self.status == SolveStatus.SUCCESS


class NestedVerdict(BaseModel):
    """Result of the 4-adjacency label check on one tessellation."""
    nested: bool
    violations: List[Tuple[int, int]] = Field(default_factory=list)
    violation_count: int = 0
    present_labels: List[int] = Field(default_factory=list)


class HedonicVerdict(BaseModel):
    hedonically_nested: bool
    side1: NestedVerdict
    side2: NestedVerdict


class CertificateRecord(BaseModel):
    index: int
    sup_d_min: float
    lower_bound: float
    coarse_lower_bound: float
    margin: float
    verdict: bool
    sampled: bool


class NestCertificate(BaseModel):
    """A-priori sufficient condition for nestedness (entropy energy)."""
    records: List[CertificateRecord] = Field(default_factory=list)
    guaranteed_nested: bool = False
    lipschitz_constant: float = 0.0
    source: str = "sampled"


class RefinementStudy(BaseModel):
    resolutions: List[int] = Field(default_factory=list)
    constants: List[Optional[float]] = Field(default_factory=list)
    differences: List[float] = Field(default_factory=list)
    extrapolated: Optional[float] = None
    monotone: bool = False


class RunConfig(BaseModel):
    """One solver run as described by a JSON file and/or CLI flags."""
    problem: Literal["congestion", "hedonic"] = "congestion"
    example: ExampleName = "E1"
    n: int = Field(default=3, ge=1)
    measure: MeasureName = "uniform"
    measure2: MeasureName = "product_xy"
    method: MethodName = "nested-bisection"
    cost: Literal["squared_distance", "bilinear"] = "squared_distance"
    A: Optional[float] = Field(default=None, gt=0)
    parameters: Optional[List[float]] = None
    embedding: Optional[List[Tuple[float, float]]] = None
    grid: int = Field(default_factory=default_grid_resolution, ge=8)
    tol: Optional[float] = Field(default=None, gt=0)
    maxit: Optional[int] = Field(default=None, ge=1)
    C0: Optional[float] = None
    C_interval: Optional[Tuple[float, float]] = None
    C: float = DEFAULTS["hedonic_c"]
    inner: Literal["bisection", "newton"] = "bisection"
    energy_weight: float = Field(default=1.0, gt=0)
    k_samples: int = Field(default=DEFAULTS["k_samples"], ge=2)
    seed: int = 0
    report_csv: Optional[str] = None
    svg: Optional[str] = None
    labels_csv: Optional[str] = None
    curve_csv: Optional[str] = None
    log_file: Optional[str] = None

    @model_validator(mode="after")
    def _fill_defaults(self):
        large = self.n >= DEFAULTS["large_n"]
        if self.tol is None:
            self.tol = DEFAULTS["hedonic_tol"] if self.problem == "hedonic" else DEFAULTS["congestion_tol"]
        if self.maxit is None:
            self.maxit = DEFAULTS["nested_maxit"] if self.method.startswith("nested") else DEFAULTS["maxit"]
        if self.C0 is None:
            self.C0 = self.energy_weight * (DEFAULTS["c0_large_n"] if large else DEFAULTS["c0"])
        if self.C_interval is None:
            lo, hi = DEFAULTS["c_interval_large_n"] if large else DEFAULTS["c_interval"]
            self.C_interval = (self.energy_weight * lo, self.energy_weight * hi)
        lo, hi = self.C_interval
        if not lo < hi:
            raise ValueError(f"C_interval must be increasing, got {self.C_interval}")
        if self.example == "explicit":
            if not self.parameters or len(self.parameters) != self.n:
                raise ValueError("example 'explicit' needs `parameters` with exactly n entries")
        if self.problem == "hedonic" and self.method == "nested-theoretical":
            raise ValueError("hedonic problems support methods newton, damped, nested-bisection and nested-newton")
        if self.problem == "hedonic" and self.energy_weight != 1.0:
            raise ValueError("energy_weight applies to congestion problems only")
        return self


class BenchmarkConfig(BaseModel):
    """A matrix of methods x N values for one example and measure."""
    problem: Literal["congestion", "hedonic"] = "congestion"
    example: ExampleName = "E1"
    measure: MeasureName = "uniform"
    measure2: MeasureName = "product_xy"
    methods: List[MethodName] = Field(default_factory=lambda: ["newton", "damped", "nested-bisection", "nested-newton"])
    n_values: List[int] = Field(default_factory=lambda: [3, 6, 12])
    grid: int = Field(default_factory=default_grid_resolution, ge=8)
    workers: int = Field(default=4, ge=1)
    record_timing: bool = True
    output: Optional[str] = None

    def cells(self) -> List[RunConfig]:
        """Run configs in method-major order; combinations RunConfig rejects are skipped."""
        cells = []
        for method in self.methods:
            for n in self.n_values:
                try:
                    cells.append(RunConfig(problem=self.problem, example=self.example, n=n, measure=self.measure,
                                           measure2=self.measure2, method=method, grid=self.grid))
                except ValueError as e:
                    logger.warning(f"[BenchmarkConfig] skipping {method} N={n}: {e}")
        return cells
