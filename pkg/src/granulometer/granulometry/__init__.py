"""Size distributions from delineated particles, Swebrec fitting and accuracy metrics."""

from .distribution import (
    DEFAULT_SIEVES_MM,
    FINES_POLICIES,
    FIT_SIEVES_MM,
    SieveSeries,
    SizeDistribution,
    build_distribution,
    combine_distributions,
    distribution_from_sizes,
    equivalent_sieve_size,
    fines_below_smallest,
    min_particle_diameter_px,
)
from .metrics import (
    DEFAULT_ENVELOPE_PCT,
    ResidualReport,
    ResidualRow,
    default_two_norm_range,
    envelope_check,
    percent_error_residuals,
    residual_report,
    two_norm_error,
)
from .swebrec import SwebrecFit, SwebrecParams, swebrec_eval, swebrec_fit, swebrec_inverse

__all__ = [
    "DEFAULT_ENVELOPE_PCT",
    "DEFAULT_SIEVES_MM",
    "FINES_POLICIES",
    "FIT_SIEVES_MM",
    "ResidualReport",
    "ResidualRow",
    "SieveSeries",
    "SizeDistribution",
    "SwebrecFit",
    "SwebrecParams",
    "build_distribution",
    "combine_distributions",
    "default_two_norm_range",
    "distribution_from_sizes",
    "envelope_check",
    "equivalent_sieve_size",
    "fines_below_smallest",
    "min_particle_diameter_px",
    "percent_error_residuals",
    "residual_report",
    "swebrec_eval",
    "swebrec_fit",
    "swebrec_inverse",
    "two_norm_error",
]
