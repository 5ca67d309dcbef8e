"""Gaussian-mixture priors with exact denoiser and exact masked posteriors.

With isotropic components ``N(m_j, s_j^2 I)`` every quantity the sampler
needs is available in closed form, which makes the mixture the reference
oracle for the stochastic parts of the package.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import rng as _rng
from .errors import ConfigurationError, DegenerateObservationError, DomainError
from .observation import Observation


class _Mixture:
    weights: np.ndarray
    means: np.ndarray

    def _var_array(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def J(self) -> int:
        return len(self.weights)

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(self.means.shape[1:])

    def mean(self) -> np.ndarray:
        return np.tensordot(self.weights, self.means, axes=1)

    def sample(self, M: int, seed=0, *, return_components: bool = False):
        """``M`` i.i.d. exact draws, shape ``(M, L, T)``."""
        if M < 1:
            raise ValueError("M must be >= 1")
        streams = seed if isinstance(seed, _rng.Streams) else _rng.Streams(seed)
        u = streams.generator(_rng.COMPONENT).random(M)
        comp = np.minimum(np.searchsorted(np.cumsum(self.weights), u, side="right"), self.J - 1)
        z = streams.normal(_rng.SAMPLE, 0, range(M), self.shape)
        std = np.sqrt(self._var_array())[comp]
        out = self.means[comp] + std * z
        return (out, comp) if return_components else out


@dataclass(frozen=True, eq=False)
class GmmPrior(_Mixture):
    """Mixture of isotropic Gaussians over ``(L, T)`` signals.

    Attributes
    ----------
    weights : ndarray, shape (J,)
    means : ndarray, shape (J, L, T)
    variances : ndarray, shape (J,)
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        m = np.asarray(self.means, dtype=float)
        v = np.atleast_1d(np.asarray(self.variances, dtype=float))
        if m.ndim == 2:
            m = m[None]
        if m.ndim != 3 or len(w) != len(m) or len(v) != len(m):
            raise ConfigurationError("weights, means and variances must describe the same J components")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ConfigurationError("mixture weights must be positive and sum to 1")
        if np.any(v <= 0):
            raise ConfigurationError("component variances must be positive")
        for name, arr in (("weights", w), ("means", m), ("variances", v)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def _var_array(self):
        return self.variances[:, None, None] * np.ones(self.means.shape[1:])

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "means": self.means.tolist(),
                "variances": self.variances.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "GmmPrior":
        try:
            return cls(d["weights"], d["means"], d["variances"])
        except KeyError as exc:
            raise ConfigurationError(f"GMM prior missing field {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def log_density(self, x, upsilon: float = 0.0) -> np.ndarray:
        """Log density of the prior convolved with ``N(0, upsilon^2 I)``."""
        x = np.asarray(x, dtype=float)
        return logsumexp(_component_logpdf(self, x, upsilon), axis=-1)

    def denoiser(self) -> "GmmDenoiser":
        return GmmDenoiser(self)


@dataclass(frozen=True, eq=False)
class GmmPosterior(_Mixture):
    """Mixture with per-coordinate variances, shape ``(J, L, T)``."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def _var_array(self):
        return self.variances

    def marginal_variance(self) -> np.ndarray:
        """Per-coordinate variance of the mixture."""
        mu = self.mean()
        second = np.tensordot(self.weights, self.variances + self.means**2, axes=1)
        return second - mu**2


def _component_logpdf(prior: GmmPrior, x: np.ndarray, upsilon: float) -> np.ndarray:
    """``log w_j + log N(x; m_j, (s_j^2 + upsilon^2) I)`` with components on the last axis."""
    d = prior.means[0].size
    tot = prior.variances + upsilon**2
    diff = x[..., None, :, :] - prior.means
    sq = (diff * diff).sum(axis=(-2, -1))
    return np.log(prior.weights) - 0.5 * d * np.log(2 * np.pi * tot) - 0.5 * sq / tot


def gmm_denoiser(prior: GmmPrior, x, upsilon: float) -> np.ndarray:
    """Exact ``E[X_0 | X_0 + upsilon * eps = x]`` under the mixture prior.

    Accepts a single ``(L, T)`` state or any batch ``(..., L, T)``.
    """
    if upsilon < 0:
        raise DomainError("upsilon must be non-negative")
    x = np.asarray(x, dtype=float)
    if upsilon == 0:
        return x.copy()
    logr = _component_logpdf(prior, x, upsilon)
    resp = np.exp(logr - logsumexp(logr, axis=-1, keepdims=True))
    s2 = prior.variances
    tot = s2 + upsilon**2
    # per-component conjugate mean, components on axis -3
    cond = (s2[:, None, None] * x[..., None, :, :] + upsilon**2 * prior.means) / tot[:, None, None]
    return (resp[..., :, None, None] * cond).sum(axis=-3)


class GmmDenoiser:
    """Denoiser-interface adapter around :func:`gmm_denoiser`."""

    def __init__(self, prior: GmmPrior):
        self.prior = prior

    def __call__(self, x, upsilon, context=None):
        return gmm_denoiser(self.prior, x, upsilon)

    def batch(self, xs, upsilon, context=None):
        return gmm_denoiser(self.prior, xs, upsilon)


def gmm_exact_posterior(prior: GmmPrior, obs: Observation) -> GmmPosterior:
    """Exact posterior of the mixture under masked observations with Gaussian noise."""
    sigma = np.asarray(obs.sigma, dtype=float)
    if np.any(sigma <= 0):
        raise DegenerateObservationError("exact posterior requires sigma > 0 on every observed lead")
    J = prior.J
    L, T = prior.shape
    means = prior.means.copy()
    variances = np.broadcast_to(prior.variances[:, None, None], (J, L, T)).copy()
    logw = np.log(prior.weights).copy()
    if obs.n_observed:
        rows, cols = obs.mask.grid()
        s2 = prior.variances[:, None, None]
        sig2 = (sigma**2)[None, :, None]
        m_obs = prior.means[:, rows, cols]
        y = obs.y[None]
        tot = s2 + sig2
        logw = logw + (-0.5 * np.log(2 * np.pi * tot) - 0.5 * (y - m_obs) ** 2 / tot).sum(axis=(-2, -1))
        means[:, rows, cols] = (s2 * y + sig2 * m_obs) / tot
        variances[:, rows, cols] = s2 * sig2 / tot
    w = np.exp(logw - logsumexp(logw))
    w = w / w.sum()
    return GmmPosterior(w, means, variances)
