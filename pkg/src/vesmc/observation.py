"""Masked noisy observations, likelihood and guiding potentials.

Lead and time indices are 0-based throughout the Python API and in
serialised files.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigurationError,
    DegenerateObservationError,
    GuidanceInfeasibleError,
    InvariantViolation,
)
from .schedule import NoiseSchedule

_LOG_2PI = np.log(2 * np.pi)


@dataclass(frozen=True, eq=False)
class ObservationMask:
    """Injective lead map (``S_y`` entries) and time map (``T_y`` entries)."""

    leads: np.ndarray
    times: np.ndarray

    def __post_init__(self):
        leads = np.asarray(self.leads, dtype=int).reshape(-1)
        times = np.asarray(self.times, dtype=int).reshape(-1)
        if len(times) == 0:
            raise ConfigurationError("time map must observe at least one sample")
        for name, arr in (("lead", leads), ("time", times)):
            if len(np.unique(arr)) != len(arr):
                raise ConfigurationError(f"{name} map must be injective")
            if np.any(arr < 0):
                raise IndexError(f"negative {name} index in mask")
        object.__setattr__(self, "leads", leads)
        object.__setattr__(self, "times", times)

    @classmethod
    def full(cls, L: int, T: int) -> "ObservationMask":
        return cls(np.arange(L), np.arange(T))

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.leads), len(self.times)

    def check_bounds(self, L: int, T: int) -> None:
        if (len(self.leads) and self.leads.max() >= L) or self.times.max() >= T:
            raise IndexError(f"mask indices out of range for a ({L}, {T}) signal")

    def grid(self):
        """Index pair selecting the observed ``(S_y, T_y)`` block of an ``(L, T)`` array."""
        return np.ix_(self.leads, self.times)

    def select(self, x: np.ndarray) -> np.ndarray:
        """Observed block of ``x`` (any leading batch axes preserved)."""
        x = np.asarray(x)
        return x[..., self.leads[:, None], self.times[None, :]]

    def observed_indicator(self, L: int, T: int) -> np.ndarray:
        out = np.zeros((L, T), dtype=bool)
        out[self.grid()] = True
        return out

    def to_dict(self) -> dict:
        return {"leads": self.leads.tolist(), "times": self.times.tolist()}


@dataclass(frozen=True, eq=False)
class Observation:
    """Observed block ``y`` (``S_y x T_y``), per-lead noise stds and mask."""

    y: np.ndarray
    sigma: np.ndarray
    mask: ObservationMask

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(self.mask.shape)
        sigma = np.asarray(self.sigma, dtype=float).reshape(-1)
        if len(sigma) != len(self.mask.leads):
            raise ConfigurationError("need one noise std per observed lead")
        if np.any(sigma < 0) or not np.all(np.isfinite(sigma)):
            raise ConfigurationError("noise stds must be finite and non-negative")
        if not np.all(np.isfinite(y)):
            raise ConfigurationError("observation contains NaN or Inf")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "sigma", sigma)

    @property
    def n_observed(self) -> int:
        return self.y.size

    def with_sigma(self, sigma) -> "Observation":
        return Observation(self.y, sigma, self.mask)

    def to_dict(self) -> dict:
        return {"mask": self.mask.to_dict(), "sigma": self.sigma.tolist(), "y": self.y.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Observation":
        try:
            mask = ObservationMask(d["mask"]["leads"], d["mask"]["times"])
            return cls(np.asarray(d["y"], dtype=float), d["sigma"], mask)
        except KeyError as exc:
            raise ConfigurationError(f"observation missing field {exc}") from None


def observe(x, mask: ObservationMask, sigma, rng: np.random.Generator) -> Observation:
    """``y[l, t] = x[leads[l], times[t]] + sigma_l * eps``."""
    x = np.asarray(x, dtype=float)
    mask.check_bounds(*x.shape[-2:])
    sigma = np.asarray(sigma, dtype=float).reshape(-1)
    if np.any(sigma < 0):
        raise ConfigurationError("noise stds must be non-negative")
    clean = mask.select(x)
    return Observation(clean + sigma[:, None] * rng.standard_normal(clean.shape), sigma, mask)


def _gauss_logpdf(v, mean, var):
    return -0.5 * (_LOG_2PI + np.log(var)) - 0.5 * (v - mean) ** 2 / var


def log_likelihood(x, obs: Observation) -> np.ndarray | float:
    """``log g_0(y | x)``: sum of per-coordinate Gaussian log densities.

    ``x`` may carry leading batch axes; one value per state is returned.
    """
    if np.any(obs.sigma <= 0):
        raise DegenerateObservationError("likelihood undefined for zero noise std")
    xs = obs.mask.select(x)
    terms = _gauss_logpdf(xs, obs.y, (obs.sigma**2)[:, None])
    return terms.sum(axis=(-2, -1))


def tau_of_sigma(sigma, schedule: NoiseSchedule, rtol: float = 1e-9) -> np.ndarray:
    """Smallest step whose cumulative std reaches ``sigma`` (floored at 1).

    A relative slack ``rtol`` lets a noise level sitting on a grid point
    select that point despite rounding.
    """
    sigma = np.asarray(sigma, dtype=float).reshape(-1)
    ups = schedule.upsilon
    if np.any(sigma > schedule.sigma_max * (1 + rtol)):
        raise GuidanceInfeasibleError(f"noise std above sigma_max={schedule.sigma_max}")
    tau = np.searchsorted(ups * (1 + rtol), sigma, side="left")
    return np.clip(tau, 1, schedule.K).astype(int)


def effective_sigma(sigma, schedule: NoiseSchedule) -> np.ndarray:
    """Noise std used inside potentials: below the first grid level it is raised to ``upsilon_1``."""
    return np.maximum(np.asarray(sigma, dtype=float), schedule.upsilon[1])


@dataclass(frozen=True, eq=False)
class GuidanceParams:
    """Slack ``delta`` in (0, 1] and per-lead activation steps ``tau``."""

    delta: float
    tau: np.ndarray

    def __post_init__(self):
        if not 0 < self.delta <= 1:
            raise ConfigurationError(f"delta must be in (0, 1], got {self.delta}")
        object.__setattr__(self, "tau", np.asarray(self.tau, dtype=int).reshape(-1))

    def active(self, k: int) -> np.ndarray:
        """Boolean membership of each lead in ``V_k = {l : k >= tau_l}``."""
        return k >= self.tau


def make_guidance(obs: Observation, schedule: NoiseSchedule, delta: float = 0.01) -> GuidanceParams:
    guidance = GuidanceParams(delta, tau_of_sigma(obs.sigma, schedule))
    check_guidance(obs, guidance, schedule)
    return guidance


def check_guidance(obs: Observation, guidance: GuidanceParams, schedule: NoiseSchedule) -> None:
    if len(guidance.tau) != len(obs.sigma):
        raise ConfigurationError("need one tau per observed lead")
    if np.any(guidance.tau < 1) or np.any(guidance.tau > schedule.K):
        raise GuidanceInfeasibleError("tau must lie in [1, K]")
    sig2 = effective_sigma(obs.sigma, schedule) ** 2
    var_at_tau = schedule.upsilon2[guidance.tau] - (1 - guidance.delta) * sig2
    if np.any(var_at_tau <= 0):
        raise InvariantViolation("potential variance must be positive from tau onwards")


def potential_variance(k: int, obs: Observation, guidance: GuidanceParams, schedule: NoiseSchedule):
    """Per-lead ``upsilon_k^2 - (1 - delta) sigma_l^2`` and the active-lead mask."""
    active = guidance.active(k)
    sig2 = effective_sigma(obs.sigma, schedule) ** 2
    var = schedule.upsilon2[k] - (1 - guidance.delta) * sig2
    if np.any(var[active] <= 0):
        raise InvariantViolation(f"non-positive potential variance at step {k}")
    return np.where(active, var, np.inf), active


def log_potential(x, k: int, obs: Observation, guidance: GuidanceParams, schedule: NoiseSchedule):
    """``log g_k(y | x)``; zero when no lead is active at step ``k``."""
    var, active = potential_variance(k, obs, guidance, schedule)
    x = np.asarray(x, dtype=float)
    if not active.any():
        return np.zeros(x.shape[:-2]) if x.ndim > 2 else 0.0
    xs = obs.mask.select(x)[..., active, :]
    terms = _gauss_logpdf(xs, obs.y[active], var[active][:, None])
    return terms.sum(axis=(-2, -1))
