"""Optimal dividend barriers under CIR stochastic discounting.

A penalized elliptic free-boundary solver computes the auxiliary stopping
value on a truncated (rate, surplus) rectangle; the barrier is read off its
unit level set; integrating along the surplus axis rebuilds the dividend
value; and counter-based Monte Carlo engines cross-check every output
against the controlled processes, with closed-form oracles for the
constant-rate case and the integrated-rate Laplace transform.
"""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    ConfigError,
    DiscountSpec,
    ModelParams,
    ValidationReport,
    discount_from_dict,
    load_model_document,
    params_from_dict,
    tail_rate,
    validate,
    value_upper_bound,
)
from .cir import (  # noqa: F401
    LaplaceCoefficients,
    cir_mean_var,
    integrated_rate_increment,
    laplace_coefficients,
    laplace_integrated_cir,
    mc_integrated_laplace,
    sample_transition,
)
from .constant_rate import (  # noqa: F401
    ConstantRateSolution,
    barrier,
    characteristic_roots,
    liquidation_value,
    solve_constant_rate,
    value_and_derivative,
)
from .free_boundary import (  # noqa: F401
    AssemblyError,
    Boundary,
    Grid2D,
    ScalarField,
    SolverConfig,
    SolverError,
    assemble_operator,
    extract_boundary,
    hjb_residual,
    integrate_value,
    rate_curvature_diagnostic,
    solve_penalized,
)
from .simulate import (  # noqa: F401
    McEstimate,
    PathConfig,
    estimate_uz,
    run_dividend_policy,
    run_stopping_value,
    sample_running_max,
    suboptimality_sweep,
    trace_path,
)
