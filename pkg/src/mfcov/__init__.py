"""Multi-fidelity covariance estimation in the log-Euclidean geometry.

Fuses coupled samples from a hierarchy of cheap and expensive data sources
into covariance estimates that are guaranteed positive definite, and
allocates a sampling budget across the levels to minimize the
mean-squared error.
"""

from .allocation import (
    AllocationPlan,
    BenefitCheck,
    CostModel,
    MomentSummary,
    Rounding,
    benefit_condition,
    bifidelity_condition_forms,
    closed_form_moments_gaussian,
    estimate_moments,
    first_order_optimal_mse,
    optimal_allocation,
    optimal_coefficients,
    predicted_mse,
    predicted_speedup,
)
from .estimators import (
    DEFAULT_DELTA,
    CoupledSampleHierarchy,
    MeanMode,
    emf_estimate,
    lemf_estimate,
    lemf_estimate_frechet,
    lemf_log_terms,
    sample_covariance,
    truncated_emf_estimate,
)
from .exceptions import (
    BudgetError,
    ConfigError,
    DataFormatError,
    DefinitenessError,
    DegenerateCorrelationError,
    EigenConvergenceError,
    HierarchyError,
    MatrixRangeError,
    MfcovError,
    NumericalError,
    OrderingError,
)
from .metric_learning import (
    LearnedMetric,
    dissimilarity_matrix,
    gmml_metric,
    mahalanobis_distance,
    mean_relative_error,
    similarity_matrix,
)
from .models import (
    GaussianNoiseHierarchy,
    HeatConduction1D,
    Model,
    TwoClassGaussian,
    draw_event,
    gaussian_preset,
    heat_preset,
    sample_hierarchy,
    solve_heat_fd,
    solve_heat_fd_batch,
    two_class_preset,
)
from .spd import (
    EigenDecomposition,
    as_spd,
    dist_affine_invariant,
    dist_frobenius,
    dist_log_euclidean,
    frechet_mean_log_euclidean,
    is_spd,
    log_add,
    log_sub,
    smallest_eigenvalue,
    spd_log,
    spd_pow,
    sym_eig,
    sym_exp,
    symmetrize,
    truncate_eigenvalues,
)

__version__ = "0.1.0"
