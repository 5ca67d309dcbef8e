"""Guided sequential Monte Carlo sampler for masked inverse problems.

The cloud is propagated from ``k = K`` down to ``k = 0``. At every step the
particles are weighted by the closed-form ratio of the one-step predictive
likelihood to the current potential, resampled multinomially, and moved
with the potential-conjugate proposal kernel.

Target sequence: a lead's potential is a lookahead while the lead is
active (``k >= tau_l``) and is absorbed into the path once ``k`` drops
below ``tau_l``. Consequently the denominator of the weight runs over the
leads active at step ``k`` (``denominator="active"``, default). The
alternative ``denominator="next"`` divides by the potential over
``V_{k+1}``, which un-does each lead's guidance when it leaves the active
set; it is kept for comparison only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.special import logsumexp

from . import rng as _rng
from .diffusion import backward_mean, denoise
from .errors import ConfigurationError, DegenerateWeightsError, InvariantViolation
from .observation import (
    GuidanceParams,
    Observation,
    check_guidance,
    log_potential,
    make_guidance,
    potential_variance,
)
from .parallel import map_chunks
from .schedule import NoiseSchedule

_LOG_2PI = math.log(2 * math.pi)


@dataclass
class SmcConfig:
    """Sampler settings.

    ``ess_threshold`` switches to adaptive resampling (resample only when
    ESS / M falls below it); ``None`` resamples at every step.
    ``weight_eta`` selects the inference std in the weight numerator:
    ``"derived"`` uses ``eta_k``, ``"shifted"`` uses ``eta_{k+1}``.
    """

    M: int = 50
    delta: float = 0.01
    seed: int = 0
    resampling: str = "multinomial"
    ess_threshold: float | None = None
    weight_eta: str = "derived"
    denominator: str = "active"
    workers: int = 1

    def __post_init__(self):
        if self.M < 1:
            raise ConfigurationError("M must be >= 1")
        if self.resampling != "multinomial":
            raise ConfigurationError(f"unsupported resampling scheme {self.resampling!r}")
        if self.weight_eta not in ("derived", "shifted"):
            raise ConfigurationError(f"weight_eta must be 'derived' or 'shifted', got {self.weight_eta!r}")
        if self.denominator not in ("active", "next"):
            raise ConfigurationError(f"denominator must be 'active' or 'next', got {self.denominator!r}")


@dataclass
class ParticleCloud:
    particles: np.ndarray
    k: int
    logw: np.ndarray

    @property
    def M(self) -> int:
        return len(self.particles)


@dataclass
class SmcResult:
    particles: np.ndarray
    diagnostics: list[dict] = field(default_factory=list)

    @property
    def log_evidence(self) -> float:
        return float(sum(d["log_normalizer_increment"] for d in self.diagnostics))


def _gauss_logpdf(v, mean, var):
    return -0.5 * (_LOG_2PI + np.log(var)) - 0.5 * (v - mean) ** 2 / var


def _weight_eta2(k: int, schedule: NoiseSchedule, weight_eta: str) -> float:
    if weight_eta == "shifted":
        return float(schedule.eta2[min(k + 1, schedule.K - 1)])
    return float(schedule.eta2[k])


def log_weight_from_mean(mu, x_next, k: int, obs: Observation, guidance: GuidanceParams,
                         schedule: NoiseSchedule, *, weight_eta: str = "derived",
                         denominator: str = "active") -> np.ndarray:
    """Log-weight given the backward mean ``mu`` already computed from ``x_next``."""
    mu = np.asarray(mu, dtype=float)
    out = np.zeros(mu.shape[:-2])
    active_k = guidance.active(k)
    if active_k.any():
        var_k, _ = potential_variance(k, obs, guidance, schedule)
        tot = _weight_eta2(k, schedule, weight_eta) + var_k[active_k][:, None]
        m = obs.mask.select(mu)[..., active_k, :]
        out = out + _gauss_logpdf(m, obs.y[active_k], tot).sum(axis=(-2, -1))
    den_set = active_k if denominator == "active" else guidance.active(k + 1)
    if den_set.any():
        var_n, _ = potential_variance(k + 1, obs, guidance, schedule)
        xn = obs.mask.select(np.asarray(x_next, dtype=float))[..., den_set, :]
        out = out - _gauss_logpdf(xn, obs.y[den_set], var_n[den_set][:, None]).sum(axis=(-2, -1))
    return out


def proposal_moments(mu, k: int, obs: Observation, guidance: GuidanceParams, schedule: NoiseSchedule):
    """Per-coordinate mean and variance of the guided proposal at step ``k``.

    Active observed coordinates get the precision-weighted combination of
    the backward kernel ``N(mu, eta_k^2)`` and the potential; all other
    coordinates keep the backward kernel.
    """
    mu = np.asarray(mu, dtype=float)
    eta2 = float(schedule.eta2[k])
    mean = mu.copy()
    var = np.full(mu.shape, eta2)
    active = guidance.active(k)
    if active.any():
        pvar, _ = potential_variance(k, obs, guidance, schedule)
        rows, cols = np.ix_(obs.mask.leads[active], obs.mask.times)
        s2 = pvar[active][:, None]
        denom = eta2 + s2
        if np.any(denom <= 0):
            raise InvariantViolation("non-positive conjugate variance")
        mean[..., rows, cols] = (eta2 * obs.y[active] + s2 * mu[..., rows, cols]) / denom
        var[..., rows, cols] = np.broadcast_to(eta2 * s2 / denom, (len(s2), len(obs.mask.times)))
    return mean, var


def _mean_at(x_next, k, schedule, denoiser, context):
    d = denoise(denoiser, x_next, float(schedule.upsilon[k + 1]), context)
    return backward_mean(d, x_next, k, schedule)


def smc_weight(x_next, k: int, obs: Observation, guidance: GuidanceParams, schedule: NoiseSchedule,
               denoiser, *, context: Any = None, weight_eta: str = "derived",
               denominator: str = "active"):
    """Log of ``L_k(x_{k+1}, y) / g_{k+1}(y | x_{k+1})`` in closed form."""
    x_next = np.asarray(x_next, dtype=float)
    mu = _mean_at(x_next, k, schedule, denoiser, context)
    return log_weight_from_mean(mu, x_next, k, obs, guidance, schedule,
                                weight_eta=weight_eta, denominator=denominator)


def smc_proposal(x_next, k: int, obs: Observation, guidance: GuidanceParams, schedule: NoiseSchedule,
                 denoiser, rng: np.random.Generator | None = None, *, noise=None, context: Any = None):
    """Draw ``x_k`` from the guided proposal kernel started at ``x_next``."""
    x_next = np.asarray(x_next, dtype=float)
    mu = _mean_at(x_next, k, schedule, denoiser, context)
    mean, var = proposal_moments(mu, k, obs, guidance, schedule)
    if noise is None:
        noise = rng.standard_normal(mean.shape)
    return mean + np.sqrt(var) * noise


def resample_multinomial(logw, rng: np.random.Generator) -> np.ndarray:
    """``M`` i.i.d. ancestor indices drawn from the self-normalised weights."""
    logw = np.asarray(logw, dtype=float)
    finite = np.isfinite(logw)
    if not finite.any() or np.any(np.isnan(logw)) or np.any(logw == np.inf):
        raise DegenerateWeightsError("no finite particle weight to resample from")
    w = np.exp(logw - logw[finite].max())
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    u = rng.random(len(logw))
    return np.minimum(np.searchsorted(cdf, u, side="right"), len(logw) - 1)


def effective_sample_size(logw) -> float:
    """``(sum w)^2 / sum w^2`` computed from log-weights."""
    logw = np.asarray(logw, dtype=float)
    w = np.exp(logw - logw.max())
    return float(w.sum() ** 2 / (w * w).sum())


def run_guided_smc(obs: Observation, config: SmcConfig, schedule: NoiseSchedule, denoiser,
                   guidance: GuidanceParams | None = None, *, shape: tuple[int, int] | None = None,
                   streams: _rng.Streams | None = None, context: Any = None,
                   callback=None) -> SmcResult:
    """Run the guided sampler and return ``M`` approximate posterior draws.

    Parameters
    ----------
    obs : Observation
    config : SmcConfig
    schedule : NoiseSchedule
    denoiser : callable
        Estimate of ``E[X_0 | X_k = x]``; see :mod:`vesmc.diffusion`.
    guidance : GuidanceParams, optional
        Defaults to ``make_guidance(obs, schedule, config.delta)``.
    shape : (L, T), optional
        Signal shape. Required unless the denoiser exposes ``prior.shape``.
    streams : Streams, optional
        Random stream family; defaults to ``Streams(config.seed)``.
    callback : callable, optional
        Called as ``callback(cloud)`` after every move with a read-only copy.

    Returns
    -------
    SmcResult
        ``particles`` of shape ``(M, L, T)`` and one diagnostics row per step
        (``k``, ``ess``, ``log_normalizer_increment``, ``n_active``, ``resampled``).
    """
    if guidance is None:
        guidance = make_guidance(obs, schedule, config.delta)
    else:
        check_guidance(obs, guidance, schedule)
    if shape is None:
        prior = getattr(denoiser, "prior", None)
        if prior is None:
            raise ConfigurationError("signal shape is required for this denoiser")
        shape = prior.shape
    shape = tuple(int(s) for s in shape)
    obs.mask.check_bounds(*shape)
    streams = streams if streams is not None else _rng.Streams(config.seed)
    K, M = schedule.K, config.M

    x = map_chunks(lambda idx: schedule.sigma_max * streams.normal(_rng.INIT, K, idx, shape), M, config.workers)
    # draws from the reference law, weighted towards g_K times the reference
    logw = np.asarray(log_potential(x, K, obs, guidance, schedule), dtype=float).reshape(M)
    diagnostics = []

    for k in range(K - 1, -1, -1):
        mu = map_chunks(lambda idx: _mean_at(x[idx.start:idx.stop], k, schedule, denoiser, context),
                        M, config.workers)
        logw = logw + log_weight_from_mean(mu, x, k, obs, guidance, schedule,
                                           weight_eta=config.weight_eta, denominator=config.denominator)
        ess = effective_sample_size(logw)
        increment = float(logsumexp(logw) - math.log(M))
        # equal weights (e.g. below every tau) leave the cloud as it is
        uniform = np.ptp(logw) == 0
        resampled = not uniform and (config.ess_threshold is None or ess < config.ess_threshold * M)
        if resampled:
            anc = resample_multinomial(logw, streams.generator(_rng.RESAMPLE, k))
            mu = mu[anc]
            new_logw = np.zeros(M)
        elif uniform:
            new_logw = np.zeros(M)
        else:
            new_logw = logw - logsumexp(logw) + math.log(M)
        diagnostics.append({"k": k, "ess": ess, "log_normalizer_increment": increment,
                            "n_active": int(guidance.active(k).sum()), "resampled": bool(resampled)})
        mean, var = proposal_moments(mu, k, obs, guidance, schedule)
        noise = map_chunks(lambda idx: streams.normal(_rng.PROPOSE, k, idx, shape), M, config.workers)
        x = mean + np.sqrt(var) * noise
        logw = new_logw
        if callback is not None:
            callback(ParticleCloud(x.copy(), k, logw.copy()))

    if not np.all(np.isfinite(x)):
        raise InvariantViolation("sampler produced non-finite particles")
    if config.ess_threshold is not None and np.ptp(logw) > 0:
        # leftover non-uniform weights: resample once so the output is unweighted
        x = x[resample_multinomial(logw, streams.generator(_rng.RESAMPLE, K))]
    return SmcResult(x, diagnostics)
