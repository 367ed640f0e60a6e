from nested_transport.constants import CURVE_FAMILIES, DEFAULTS, REFERENCE_CONSTANTS, reference_constant
from nested_transport.geometry import (
    BilinearCost,
    CostSpec,
    DensityField,
    GridSpec,
    SquaredDistanceCost,
    TargetSet,
    build_density,
    cost_difference_field,
    superlevel_mass,
)
from nested_transport.schemas import (
    BenchmarkConfig,
    NestCertificate,
    NestedVerdict,
    RunConfig,
    SolveReport,
    SolveStatus,
)
from nested_transport.monitor import SolverMonitor
from nested_transport.numerics import NumericsError, fd_jacobian, restricted_solve, scalar_root
from nested_transport.laguerre import (
    LaguerreEngine,
    Potentials,
    Tessellation,
    check_nested,
    dual_u,
    shift_invariance_check,
    tessellate,
    transport_cost,
)
from nested_transport.nest_analysis import (
    certify_nested_apriori,
    d_min,
    entropy_weight_bounds,
    k_max,
    lipschitz_Mc,
    splitting_levels,
    sup_d_min,
)
from nested_transport.solvers import (
    HedonicProblem,
    error_func,
    hedonic_nested,
    hedonic_newton,
    nested_bisection,
    nested_newton,
    newton_damped,
    newton_standard,
)
