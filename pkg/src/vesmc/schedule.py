"""Variance-exploding noise schedules and inference-process coefficients.

A schedule holds three grids:

* ``upsilon[k]``, k = 0..K: cumulative noise std of the forward process,
  ``upsilon[0] = 0`` and ``upsilon[K] = sigma_max``;
* ``rho[k]``, k = 1..K: per-step noise std, ``upsilon[k]**2 = sum(rho[1:k+1]**2)``;
* ``eta[k]``, k = 0..K-1: std of the inference (and backward) kernels.

Squared grids are stored alongside the stds and every equality check is
done on squared values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import ConfigurationError, DegenerateScheduleError, IndexOrderError, InvariantViolation

_REL_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Immutable VE schedule. Use the ``build_*`` constructors or :meth:`from_upsilon`.

    ``rho2`` is indexed like the math (entry 0 is unused and set to 0).
    """

    upsilon2: np.ndarray
    rho2: np.ndarray
    eta2: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("upsilon2", "rho2", "eta2"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        _validate(self.upsilon2, self.rho2, self.eta2)

    # -- derived views -------------------------------------------------
    @property
    def K(self) -> int:
        return len(self.upsilon2) - 1

    @property
    def upsilon(self) -> np.ndarray:
        return np.sqrt(self.upsilon2)

    @property
    def rho(self) -> np.ndarray:
        return np.sqrt(self.rho2)

    @property
    def eta(self) -> np.ndarray:
        return np.sqrt(self.eta2)

    @property
    def sigma_max(self) -> float:
        return float(np.sqrt(self.upsilon2[-1]))

    @property
    def sigma_min(self) -> float:
        return float(np.sqrt(self.upsilon2[1]))

    def __repr__(self) -> str:
        return f"NoiseSchedule(K={self.K}, sigma_min={self.sigma_min:.3g}, sigma_max={self.sigma_max:.3g})"

    # -- construction helpers -----------------------------------------
    @classmethod
    def from_upsilon(cls, upsilon, eta=None, meta: dict | None = None) -> "NoiseSchedule":
        """Build from an explicit ``upsilon[0..K]`` grid (``upsilon[0]`` must be 0).

        ``eta`` defaults to :func:`eta_ddpm_matching`.
        """
        u2 = np.asarray(upsilon, dtype=float) ** 2
        if u2.ndim != 1 or len(u2) < 2:
            raise ConfigurationError("upsilon must be a 1-D grid with at least two entries")
        rho2 = np.concatenate([[0.0], np.diff(u2)])
        if eta is None:
            eta2 = _ddpm_eta2(u2, rho2)
        else:
            eta2 = np.asarray(eta, dtype=float) ** 2
        return cls(u2, rho2, eta2, dict(meta or {}))

    def coefficient(self, k: int) -> float:
        """Bridge coefficient ``c`` used by the kernel from k to k-1."""
        if not 1 <= k <= self.K:
            raise IndexOrderError(f"bridge index k={k} outside [1, {self.K}]")
        num = self.upsilon2[k - 1] - self.eta2[k - 1]
        if num < -_REL_TOL * max(self.upsilon2[k - 1], self.eta2[k - 1]):
            raise InvariantViolation(f"eta[{k - 1}]^2 exceeds upsilon[{k - 1}]^2")
        return float(np.sqrt(max(num, 0.0) / self.upsilon2[k]))

    def to_dict(self) -> dict[str, Any]:
        out = dict(self.meta)
        out["K"] = self.K
        if "eta_rule" not in out:
            out["eta_rule"] = self.eta.tolist()
        if "grid" not in out:
            out["grid"] = "explicit"
            out["upsilon"] = self.upsilon.tolist()
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _validate(u2, rho2, eta2):
    K = len(u2) - 1
    if K < 1:
        raise ConfigurationError("schedule needs K >= 1")
    if len(rho2) != K + 1 or len(eta2) != K:
        raise ConfigurationError("grid lengths do not match K")
    if not (np.all(np.isfinite(u2)) and np.all(np.isfinite(eta2))):
        raise ConfigurationError("schedule contains non-finite values")
    if u2[0] != 0.0:
        raise ConfigurationError("upsilon[0] must be 0")
    if np.any(np.diff(u2) <= 0):
        raise ConfigurationError("upsilon must be strictly increasing")
    telescoped = np.cumsum(rho2)
    if np.any(np.abs(telescoped - u2) > _REL_TOL * np.maximum(u2, 1e-300) * (1 + np.arange(K + 1))):
        raise InvariantViolation("sum of rho^2 does not reproduce upsilon^2")
    if np.any(eta2 < 0):
        raise InvariantViolation("eta^2 must be non-negative")
    if K > 1 and np.any(eta2[1:] > u2[1:K] * (1 + _REL_TOL)):
        raise InvariantViolation("eta_k^2 must not exceed upsilon_k^2")
    if eta2[0] <= 0:
        raise InvariantViolation("eta_0 must be positive")


def _ddpm_eta2(u2, rho2):
    K = len(u2) - 1
    eta2 = np.empty(K)
    if K == 1:
        raise ConfigurationError("K = 1 has no eta_1 to copy into eta_0; pass eta explicitly")
    eta2[1:] = u2[1:K] / u2[2:] * rho2[2:]
    eta2[0] = eta2[1]
    return eta2


def eta_ddpm_matching(schedule: NoiseSchedule) -> np.ndarray:
    """Inference stds matching the forward-process posterior bridge.

    ``eta_k^2 = upsilon_k^2 / upsilon_{k+1}^2 * rho_{k+1}^2`` for k in [1, K-1],
    with ``eta_0 = eta_1``. A single-step schedule keeps its own ``eta_0``.
    """
    if schedule.K == 1:
        return schedule.eta.copy()
    return np.sqrt(_ddpm_eta2(schedule.upsilon2, schedule.rho2))


def _check_sigmas(K, sigma_min, sigma_max):
    if not isinstance(K, (int, np.integer)) or K < 1:
        raise ConfigurationError(f"K must be a positive integer, got {K!r}")
    if not (sigma_min > 0 and sigma_max > 0):
        raise ConfigurationError("sigma_min and sigma_max must be positive")
    if not sigma_min < sigma_max:
        raise ConfigurationError("sigma_min must be strictly smaller than sigma_max")


def _single_step(sigma_min, sigma_max, meta):
    meta = dict(meta, sigma_min=float(sigma_min), sigma_max=float(sigma_max), eta_rule="ddpm_matching")
    return NoiseSchedule.from_upsilon([0.0, sigma_max], eta=[sigma_min], meta=meta)


def build_geometric_schedule(K: int, sigma_min: float, sigma_max: float) -> NoiseSchedule:
    """Log-uniform grid ``upsilon[1..K]`` from ``sigma_min`` to ``sigma_max``.

    For ``K = 1`` the single level is ``sigma_max`` and ``eta_0 = sigma_min``.
    """
    _check_sigmas(K, sigma_min, sigma_max)
    if K == 1:
        return _single_step(sigma_min, sigma_max, {"grid": "geometric"})
    ups = np.concatenate([[0.0], np.geomspace(sigma_min, sigma_max, K)])
    ups[1], ups[-1] = sigma_min, sigma_max
    meta = {"grid": "geometric", "sigma_min": float(sigma_min), "sigma_max": float(sigma_max),
            "eta_rule": "ddpm_matching"}
    return NoiseSchedule.from_upsilon(ups, meta=meta)


def build_power_schedule(K: int, sigma_min: float, sigma_max: float, exponent: float = 7.0) -> NoiseSchedule:
    """Power-law grid ``upsilon_k = (a + (k-1)/(K-1) (b - a))^exponent``, ``a = sigma_min^(1/exponent)``."""
    _check_sigmas(K, sigma_min, sigma_max)
    if exponent <= 0:
        raise ConfigurationError("power-law exponent must be positive")
    if K == 1:
        return _single_step(sigma_min, sigma_max, {"grid": "power", "exponent": float(exponent)})
    a, b = sigma_min ** (1 / exponent), sigma_max ** (1 / exponent)
    ups = np.concatenate([[0.0], np.linspace(a, b, K) ** exponent])
    ups[1], ups[-1] = sigma_min, sigma_max
    meta = {"grid": "power", "exponent": float(exponent), "sigma_min": float(sigma_min),
            "sigma_max": float(sigma_max), "eta_rule": "ddpm_matching"}
    return NoiseSchedule.from_upsilon(ups, meta=meta)


def schedule_from_dict(cfg: dict[str, Any]) -> NoiseSchedule:
    """Inverse of :meth:`NoiseSchedule.to_dict`."""
    grid = cfg.get("grid", "geometric")
    try:
        if grid == "explicit":
            sched = NoiseSchedule.from_upsilon(cfg["upsilon"])
        elif grid == "geometric":
            sched = build_geometric_schedule(int(cfg["K"]), float(cfg["sigma_min"]), float(cfg["sigma_max"]))
        elif grid == "power":
            sched = build_power_schedule(int(cfg["K"]), float(cfg["sigma_min"]), float(cfg["sigma_max"]),
                                         float(cfg.get("exponent", 7.0)))
        else:
            raise ConfigurationError(f"unknown grid {grid!r}")
    except KeyError as exc:
        raise ConfigurationError(f"schedule config missing {exc}") from None
    rule = cfg.get("eta_rule", "ddpm_matching")
    if isinstance(rule, str):
        if rule != "ddpm_matching":
            raise ConfigurationError(f"unknown eta_rule {rule!r}")
        return sched
    meta = dict(sched.meta)
    meta["eta_rule"] = [float(e) for e in rule]
    return NoiseSchedule(sched.upsilon2, sched.rho2, np.asarray(rule, dtype=float) ** 2, meta)


def bridge_mean(x0, xk, k: int, schedule: NoiseSchedule) -> np.ndarray:
    """Mean of the inference kernel from step k to k-1: ``x0 + c (xk - x0)``."""
    c = schedule.coefficient(k)
    x0 = np.asarray(x0, dtype=float)
    return x0 + c * (np.asarray(xk, dtype=float) - x0)


def inference_marginals(schedule: NoiseSchedule, offset: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Compose inference kernels analytically from K down to 1.

    Starting from ``q_K = N(x0 + offset, upsilon_K^2)`` (per coordinate, with
    ``x0 = 0``), returns the mean and variance of ``q_k`` for k = 1..K as
    arrays indexed by k (entry 0 unused). Lemma-style check: the variance
    equals ``upsilon_k^2`` and the mean stays at ``x0`` when ``offset`` is 0.
    """
    K = schedule.K
    mean = np.zeros(K + 1)
    var = np.zeros(K + 1)
    mean[K], var[K] = offset, schedule.upsilon2[K]
    for k in range(K - 1, 0, -1):
        c = schedule.coefficient(k + 1)
        mean[k] = c * mean[k + 1]
        var[k] = c * c * var[k + 1] + schedule.eta2[k]
    return mean, var


def loss_weights(schedule: NoiseSchedule) -> np.ndarray:
    """Weights ``gamma_k^2``, k = 1..K, making the denoising loss a KL bound.

    Returned array is indexed by k with entry 0 unused (NaN).
    """
    eta2 = schedule.eta2
    if np.any(eta2 <= 0):
        bad = int(np.flatnonzero(eta2 <= 0)[0])
        raise DegenerateScheduleError(f"eta[{bad}] = 0 makes the loss weight undefined")
    K = schedule.K
    g2 = np.full(K + 1, np.nan)
    g2[1] = 1.0 / eta2[0]
    for k in range(2, K + 1):
        c = schedule.coefficient(k)
        g2[k] = (1.0 - c) ** 2 / eta2[k - 1]
    return g2
