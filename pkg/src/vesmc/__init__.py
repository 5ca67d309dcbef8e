"""Guided sequential Monte Carlo posterior sampling under variance-exploding diffusion priors."""

from .diffusion import (
    SIGMA_DATA,
    Preconditioned,
    PreconditionCoeffs,
    backward_generate,
    backward_step,
    forward_sample,
    precondition_apply,
    precondition_coeffs,
)
from .errors import (
    ConfigurationError,
    ContractViolation,
    DegenerateObservationError,
    DegenerateScheduleError,
    DegenerateWeightsError,
    DomainError,
    GuidanceInfeasibleError,
    IndexOrderError,
    InvariantViolation,
    SingularMomentsError,
    UndefinedScoreError,
    VesmcError,
)
from .gmm import GmmDenoiser, GmmPosterior, GmmPrior, gmm_denoiser, gmm_exact_posterior
from .metrics import (
    EmpiricalMoments,
    emd_exact,
    mahalanobis,
    per_lead_rescaled_mahalanobis,
    r2_score,
    rescaled_mahalanobis,
)
from .mle import MleConfig, MleResult, estimate_gradient, grad_log_g0, run_mle
from .observation import (
    GuidanceParams,
    Observation,
    ObservationMask,
    log_likelihood,
    log_potential,
    make_guidance,
    observe,
    tau_of_sigma,
)
from .rng import Streams
from .schedule import (
    NoiseSchedule,
    bridge_mean,
    build_geometric_schedule,
    build_power_schedule,
    eta_ddpm_matching,
    inference_marginals,
    loss_weights,
    schedule_from_dict,
)
from .smc import (
    ParticleCloud,
    SmcConfig,
    SmcResult,
    effective_sample_size,
    proposal_moments,
    resample_multinomial,
    run_guided_smc,
    smc_proposal,
    smc_weight,
)
from .synth import BeatParams, synth_beat, synth_prior

__version__ = "0.1.0"
