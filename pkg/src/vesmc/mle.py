"""Maximum-likelihood estimation of per-lead observation noise stds.

The marginal likelihood gradient is estimated with the Fisher identity:
the posterior expectation of the complete-data score, approximated by the
particles of several independent guided-SMC chains run at the current
estimate. Updates use a Robbins-Monro step ``gamma / (i + 1) ** 0.6``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from . import rng as _rng
from .errors import ConfigurationError, DomainError, GuidanceInfeasibleError
from .observation import Observation, make_guidance
from .schedule import NoiseSchedule
from .smc import SmcConfig, run_guided_smc

PHI_FLOOR = 1e-6
STEP_DECAY = 0.6


@dataclass
class MleConfig:
    """Settings of the stochastic-gradient noise estimator.

    ``phi0`` may be a scalar (shared by all leads) or one value per lead;
    ``None`` starts from the stds stored in the observation.
    """

    M: int = 50
    N_c: int = 4
    N_mle: int = 10
    gamma: float = 0.1
    phi0: Any = None
    seed: int = 0
    delta: float = 0.01
    workers: int = 1

    def __post_init__(self):
        if min(self.M, self.N_c, self.N_mle) < 1:
            raise ConfigurationError("M, N_c and N_mle must all be >= 1")
        if not self.gamma > 0:
            raise ConfigurationError("gamma must be positive")
        if self.phi0 is not None and np.any(np.asarray(self.phi0, dtype=float) <= 0):
            raise ConfigurationError("phi0 must be positive")


@dataclass
class MleResult:
    phi: np.ndarray
    history: list[dict] = field(default_factory=list)


def grad_log_g0(x, obs: Observation, phi) -> np.ndarray:
    """Derivative of ``log g_0(y | x)`` with respect to each lead's noise std.

    ``sum_t (x - y)^2 / phi^3 - 1 / phi`` per observed lead. ``x`` may carry
    leading batch axes; the result has shape ``(..., S_y)``.
    """
    phi = np.asarray(phi, dtype=float).reshape(-1)
    if len(phi) != len(obs.mask.leads):
        raise ConfigurationError("need one std per observed lead")
    if np.any(phi <= 0):
        raise DomainError("noise stds must be positive")
    r2 = (obs.mask.select(np.asarray(x, dtype=float)) - obs.y) ** 2
    T_y = obs.y.shape[-1]
    return r2.sum(axis=-1) / phi**3 - T_y / phi


def estimate_gradient(clouds: Sequence[np.ndarray] | np.ndarray, obs: Observation, phi) -> np.ndarray:
    """Average of :func:`grad_log_g0` over every particle of every chain."""
    if isinstance(clouds, np.ndarray):
        clouds = [clouds]
    parts = [np.asarray(c, dtype=float).reshape((-1,) + np.shape(c)[-2:]) for c in clouds if np.size(c)]
    if not parts:
        raise ConfigurationError("cannot estimate a gradient from zero particles")
    return grad_log_g0(np.concatenate(parts), obs, phi).mean(axis=0)


def _default_sampler(schedule, denoiser, config: MleConfig, shape, context):
    def sample(obs_i: Observation, streams: _rng.Streams) -> np.ndarray:
        smc_cfg = SmcConfig(M=config.M, delta=config.delta, workers=config.workers)
        guidance = make_guidance(obs_i, schedule, config.delta)
        return run_guided_smc(obs_i, smc_cfg, schedule, denoiser, guidance, shape=shape,
                              streams=streams, context=context).particles
    return sample


def run_mle(obs: Observation, config: MleConfig, schedule: NoiseSchedule, denoiser=None, *,
            shape: tuple[int, int] | None = None, sampler: Callable | None = None,
            context: Any = None) -> MleResult:
    """Stochastic-gradient ascent on the marginal log-likelihood of the noise stds.

    Parameters
    ----------
    obs : Observation
        Measurements; the stored ``sigma`` is only used when ``config.phi0`` is None.
    config : MleConfig
    schedule : NoiseSchedule
    denoiser : callable, optional
        Passed to the guided sampler; unused when ``sampler`` is given.
    sampler : callable, optional
        ``sampler(obs_i, streams) -> (M, L, T)`` posterior draws for one chain,
        replacing the guided SMC run (e.g. exact draws from an oracle).

    Returns
    -------
    MleResult
        Final stds and one history row per iteration with the keys
        ``iteration``, ``step_size``, ``grad_norm`` and ``phi`` (after the update).
    """
    S = len(obs.mask.leads)
    phi0 = obs.sigma if config.phi0 is None else config.phi0
    phi = np.broadcast_to(np.asarray(phi0, dtype=float), (S,)).copy()
    if np.any(phi <= 0):
        raise ConfigurationError("initial stds must be positive")
    if sampler is None:
        if denoiser is None:
            raise ConfigurationError("run_mle needs a denoiser or a sampler")
        sampler = _default_sampler(schedule, denoiser, config, shape, context)
    root = _rng.Streams(config.seed)
    history = []
    for i in range(config.N_mle):
        obs_i = obs.with_sigma(phi)
        clouds = [sampler(obs_i, root.spawn(i, c)) for c in range(config.N_c)]
        grad = estimate_gradient(clouds, obs_i, phi)
        step = config.gamma / (i + 1) ** STEP_DECAY
        phi = phi + step * grad
        if np.any(phi > schedule.sigma_max):
            raise GuidanceInfeasibleError(f"noise estimate diverged above sigma_max at iteration {i}")
        phi = np.maximum(phi, PHI_FLOOR)
        history.append({"iteration": i, "step_size": step, "grad_norm": float(np.linalg.norm(grad)),
                        "phi": phi.copy()})
    return MleResult(phi, history)
