"""Thompson Sampling for noisy black-box optimization under a GP prior."""

from .bench import (
    CampaignResult,
    Objective,
    average_regret,
    chi_square_tail_bound,
    decay_rate_fit,
    delta_epsilon,
    error_metric,
    f1_objective,
    f2_objective,
    f_beta_objective,
    noisy_oracle,
    run_campaign,
)
from .engine import RunTrace, StageRecord, TsConfig, inner_argmax, run, should_stop
from .errors import DegenerateKernelError, InsufficientDataError, NumericError
from .hyperfit import (
    FitReport,
    PriorSpec,
    log_marginal_likelihood,
    lml_gradient,
    map_estimate,
)
from .kernel import (
    Domain,
    FeatureMap,
    HyperParams,
    gram_matrix,
    nystrom_feature_map,
    rbf_kernel,
    rff_feature_map,
    truncation_level,
)
from .posterior import (
    Dataset,
    Origin,
    PosteriorState,
    append_observation,
    build_posterior,
    posterior_predict,
    sample_theta,
)

__version__ = "0.1.0"
