"""Banded covariance estimation.

Conjugate inverse-Wishart posterior sampling followed by banding with a
positive-definite adjustment (or the banded dual solve), cross-validated
tuning of the adjustment and of the bandwidth, frequentist baselines,
interval estimation for covariance functionals, and a Monte Carlo harness.
"""

from .bandmat import (
    BandSpec,
    ClassBounds,
    as_symmetric,
    band,
    band_mask,
    class_membership,
    extreme_eigenvalues,
    pd_band_adjust,
    spectral_norm,
)
from .cli import (
    PredictionTask,
    posterior_predict_tail,
    predict_tail,
    prediction_mse,
    transform_counts,
)
from .crossval import (
    CVGrid,
    CVReport,
    default_cv_grid,
    estimated_log_predictive,
    frequentist_loo_score,
    loo_log_weight,
    loo_log_weight_matrix,
    select_bandwidth,
    select_epsilon,
    select_frequentist_tuning,
)
from .errors import (
    BandcovError,
    ConvergenceError,
    DegenerateWeightsError,
    FoldFailureError,
    InvalidStateError,
    NotPositiveDefiniteError,
    NumericError,
)
from .estimators import banded_sample_cov, dual_mle, mle_icf, ridge_adjusted_cov, sample_cov
from .inference import (
    BandIndexMap,
    Functional,
    IntervalEstimate,
    band_fisher_block,
    conditional_mean,
    conditional_mean_functional,
    delta_method_ci,
    functional_gradient_fd,
    hpd_interval,
    q_matrix,
    quantile_credible_interval,
)
from .posterior import (
    PosteriorSampleSet,
    PostProcessing,
    banding_post_process,
    conjugate_update,
    default_epsilon,
    draw_initial_samples,
    dual_post_process,
    load_sample_set,
    posterior_mean,
    save_sample_set,
)
from .sampling import (
    IWParams,
    SeedSpec,
    gaussian_log_likelihood,
    iw_log_density,
    log_multivariate_gamma,
    sample_inverse_wishart,
    sample_mvn,
    sample_wishart,
)
from .simulate import (
    ESTIMATOR_NAMES,
    ExperimentConfig,
    ExperimentResult,
    TrueCovSpec,
    default_prior,
    make_sigma1,
    make_sigma2,
    make_sigma3,
    make_true_cov,
    posterior_spectral_loss,
    run_interval_experiment,
    run_point_estimation,
    timing_summary,
)

__version__ = "0.1.0"
