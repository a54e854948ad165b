"""Particle efficient importance sampling for state space models."""

from .bayes import (
    ChainResult,
    Is2Result,
    Marginal,
    MvtProposal,
    ParamSpace,
    PriorSpec,
    bivariate_sv_param_space,
    bootstrap_se,
    chain_mean_se,
    fit_mvt_proposal,
    is2_run,
    log_jacobian,
    log_prior,
    make_loglik,
    obm_inefficiency,
    optimal_particles,
    pmmh_arw,
    pmmh_imh,
    sample_prior,
    train_mvt_proposal,
    transform,
    transform_inverse,
)
from .eis import (
    CrnStore,
    EisConfig,
    EisParams,
    KernelMoments,
    draw_state,
    fit_eis,
    kernel_moments,
    log_phi,
    natural_params,
)
from .harness import (
    ExperimentConfig,
    MethodSpec,
    ObservationSeries,
    TimingModel,
    VarianceStudyResult,
    efficiency,
    load_returns_csv,
    variance_from_samples,
    variance_study,
    write_returns_csv,
)
from .kalman import kalman_loglik
from .models import (
    BivSvParams,
    LinGaussParams,
    MvLinGaussParams,
    Trajectory,
    TransitionMoments,
    UnivSvParams,
    bivariate_sv,
    get_model,
    linear_gaussian,
    log_meas,
    log_transition,
    simulate_dgp,
    transition_moments,
    univariate_sv,
    univariate_sv_t,
)
from .particle import (
    ForwardState,
    PeisConfig,
    eis_loglik,
    forward_weights,
    peis_loglik,
    unbiasedness_harness,
)
from .smc import (
    LikEstimate,
    ParticleSystem,
    ResamplePolicy,
    apf0_loglik,
    bootstrap_loglik,
    ess,
    sisr2_loglik,
    systematic_resample,
)

__version__ = "0.1.0"
