"""Partially-observable pure birth process modeling of cumulative count data."""

__version__ = "0.1.0"

from .dynamics import (
    DynamicsSchedule,
    FitResult,
    ForecastTable,
    ObservationSeries,
    RegimeSpec,
    cumulative_rate,
    lambda_at,
    p_at,
    split,
)
from .filtering import (
    FilterRun,
    FilterState,
    TruncationCapError,
    binom_log_obs,
    cond_mean_var_closed,
    filter_series,
    filtered_moments,
    filtered_pmf,
    init_filter,
    pbp_log_transition,
    predictive_pmf,
    rho_step,
    truncate_bound,
)

__all__ = [
    "DynamicsSchedule",
    "FitResult",
    "ForecastTable",
    "ObservationSeries",
    "RegimeSpec",
    "cumulative_rate",
    "lambda_at",
    "p_at",
    "split",
    "FilterRun",
    "FilterState",
    "TruncationCapError",
    "binom_log_obs",
    "cond_mean_var_closed",
    "filter_series",
    "filtered_moments",
    "filtered_pmf",
    "init_filter",
    "pbp_log_transition",
    "predictive_pmf",
    "rho_step",
    "truncate_bound",
]
