"""Multi-sample statistics with random group membership.

Membership processes, per-group extraction, stratified estimators with
chi-square Wald regions, and a seeded Monte Carlo harness.
"""

__version__ = "0.1.0"

from .estimation import (  # noqa: E402
    EmptyGroup,
    EstimateReport,
    EstimationError,
    InsufficientGroupSize,
    SingularCovariance,
    WeightScheme,
    chi_square_quantile,
    compute_weights,
    estimate,
    group_covariance,
    group_mean,
    region_contains,
    stratified_mean,
    wald_statistic,
)
from .membership import (  # noqa: E402
    GroupView,
    MembershipProcess,
    SampleBatch,
    draw_batch,
    extract_group,
    extraction_indices,
    generate_memberships,
    group_counts,
)
from .montecarlo import ExperimentConfig, ExperimentResult, run_experiment  # noqa: E402
from .population import (  # noqa: E402
    Gaussian,
    PopulationSpec,
    ShiftedExponential,
    UniformBox,
    asymptotic_covariance,
    sample_conditional,
    true_mean,
)
