"""Probability estimation by truncated inverse binomial sampling."""

from .bounds import (
    BoundVariant,
    ErrorSpec,
    InvalidSpecError,
    Plan,
    bound_constant,
    bound_exact,
    bound_loose,
    bound_simplified,
    chernoff_hoeffding_n,
    clt_approx_n,
    gain_ratio,
    inverse_binomial_threshold,
    make_plan,
    relative_entropy,
)
from .engine import (
    EstimationResult,
    SourceError,
    StopReason,
    TrialSource,
    TruncationWarning,
    external_source,
    run_fixed_size,
    run_inverse_binomial,
    run_truncated_ibs,
    synthetic_source,
)
from .oracle import (
    CoverageReport,
    CriterionMode,
    CriterionSpec,
    criterion_holds,
    empirical_coverage,
    exact_fixed_coverage,
    exact_walk_coverage,
)

__version__ = "0.1.0"
