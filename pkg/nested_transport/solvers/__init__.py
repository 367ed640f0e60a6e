from nested_transport.solvers.congestion import (
    ENTROPY,
    InternalEnergy,
    c_search_bounds,
    error_func,
    nested_bisection,
    nested_newton,
    newton_damped,
    newton_standard,
    objective_value,
    residual_G,
    residual_H,
    splitting_start,
    theoretical_h,
)
from nested_transport.solvers.hedonic import (
    HedonicProblem,
    hedonic_nested,
    hedonic_nestedness,
    hedonic_newton,
    hedonic_residual,
)
