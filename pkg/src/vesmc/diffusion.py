"""Forward noising, backward generation and denoiser preconditioning.

Signals are plain ``numpy`` arrays of shape ``(L, T)`` (channels x time
samples); batches carry extra leading axes, e.g. ``(M, L, T)`` for a
particle cloud.

A denoiser is any callable ``denoiser(x, upsilon)`` returning an estimate of
``E[X_0 | X_k = x]`` with the same shape as ``x``. Denoisers may accept an
optional ``context`` keyword (conditioning payload, forwarded untouched)
and may expose a vectorised ``batch(xs, upsilon, context=None)`` method.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Protocol

import numpy as np

from . import rng as _rng
from .errors import ContractViolation, DomainError, IndexOrderError, InvariantViolation
from .parallel import map_chunks
from .schedule import NoiseSchedule, bridge_mean

SIGMA_DATA = 0.5


class Denoiser(Protocol):
    def __call__(self, x: np.ndarray, upsilon: float) -> np.ndarray: ...


def as_signal(x, name: str = "signal") -> np.ndarray:
    """Validate an ``(L, T)`` signal (or batch of them) and return it as float array."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim < 2 or arr.shape[-1] < 1 or arr.shape[-2] < 1:
        raise ContractViolation(f"{name} must have shape (..., L, T) with L, T >= 1, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvariantViolation(f"{name} contains NaN or Inf")
    return arr


def _call(denoiser, x, upsilon, context):
    if context is None:
        return denoiser(x, upsilon)
    return denoiser(x, upsilon, context=context)


def denoise(denoiser, x: np.ndarray, upsilon: float, context: Any = None) -> np.ndarray:
    """Evaluate a denoiser on one state or a batch, checking the shape contract."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        out = np.asarray(_call(denoiser, x, upsilon, context), dtype=float)
    elif hasattr(denoiser, "batch"):
        if context is None:
            out = np.asarray(denoiser.batch(x, upsilon), dtype=float)
        else:
            out = np.asarray(denoiser.batch(x, upsilon, context=context), dtype=float)
    else:
        flat = x.reshape((-1,) + x.shape[-2:])
        out = np.stack([np.asarray(_call(denoiser, xi, upsilon, context), dtype=float) for xi in flat])
        out = out.reshape(x.shape) if out.shape == flat.shape else out
    if out.shape != x.shape:
        raise ContractViolation(f"denoiser returned shape {out.shape} for input {x.shape}")
    return out


# -- preconditioning ---------------------------------------------------------

@dataclass(frozen=True)
class PreconditionCoeffs:
    c_in: float
    c_skip: float
    c_out: float
    c_noise: float
    sigma_data: float


def precondition_coeffs(upsilon: float, sigma_data: float = SIGMA_DATA) -> PreconditionCoeffs:
    """Input/skip/output/noise scalings of the denoiser reparametrisation."""
    if not upsilon > 0:
        raise DomainError(f"upsilon must be positive, got {upsilon}")
    if not sigma_data > 0:
        raise DomainError(f"sigma_data must be positive, got {sigma_data}")
    c_in = 1.0 / np.sqrt(upsilon**2 + sigma_data**2)
    return PreconditionCoeffs(
        c_in=float(c_in),
        c_skip=float(c_in**2 * sigma_data**2),
        c_out=float(upsilon * sigma_data * c_in),
        c_noise=float(np.log(upsilon) / 4.0),
        sigma_data=float(sigma_data),
    )


def precondition_apply(raw_net: Callable, x, upsilon: float, sigma_data: float = SIGMA_DATA) -> np.ndarray:
    """``c_skip x + c_out F(c_in x, c_noise)`` for a raw network ``F``."""
    c = precondition_coeffs(upsilon, sigma_data)
    x = np.asarray(x, dtype=float)
    raw = np.asarray(raw_net(c.c_in * x, c.c_noise), dtype=float)
    if raw.shape != x.shape:
        raise ContractViolation(f"raw network returned shape {raw.shape} for input {x.shape}")
    return c.c_skip * x + c.c_out * raw


class Preconditioned:
    """Wrap a raw network ``F(x_scaled, c_noise)`` into a denoiser."""

    def __init__(self, raw_net: Callable, sigma_data: float = SIGMA_DATA):
        self.raw_net = raw_net
        self.sigma_data = sigma_data

    def __call__(self, x, upsilon):
        return precondition_apply(self.raw_net, x, upsilon, self.sigma_data)

    def batch(self, xs, upsilon):
        return precondition_apply(self.raw_net, xs, upsilon, self.sigma_data)


# -- forward / backward processes --------------------------------------------

def forward_sample(x_s, s: int, k: int, schedule: NoiseSchedule, rng: np.random.Generator) -> np.ndarray:
    """Draw ``X_k | X_s = x_s`` from ``N(x_s, (upsilon_k^2 - upsilon_s^2) I)``."""
    if not 0 <= s < k <= schedule.K:
        raise IndexOrderError(f"need 0 <= s < k <= K, got s={s}, k={k}, K={schedule.K}")
    x_s = as_signal(x_s, "x_s")
    std = np.sqrt(schedule.upsilon2[k] - schedule.upsilon2[s])
    return x_s + std * rng.standard_normal(x_s.shape)


def backward_mean(denoised: np.ndarray, x_next: np.ndarray, k: int, schedule: NoiseSchedule) -> np.ndarray:
    """Mean of the backward kernel from step k+1 to k given ``D(x_{k+1})``."""
    if not 0 <= k < schedule.K:
        raise IndexOrderError(f"backward step index k={k} outside [0, {schedule.K - 1}]")
    if k == 0:
        return np.asarray(denoised, dtype=float)
    return bridge_mean(denoised, x_next, k + 1, schedule)


def backward_step(x_next, k: int, denoiser, schedule: NoiseSchedule, rng: np.random.Generator | None = None,
                  *, noise: np.ndarray | None = None, context: Any = None) -> np.ndarray:
    """Sample ``X_k`` from the backward kernel given ``X_{k+1} = x_next``.

    For ``k >= 1`` the kernel is ``N(bridge_mean(D(x_{k+1}), x_{k+1}), eta_k^2 I)``;
    for ``k = 0`` it is ``N(D(x_1), eta_0^2 I)``. Pass either ``rng`` or a
    pre-drawn standard normal ``noise`` of the same shape as ``x_next``.
    """
    x_next = as_signal(x_next, "x_next")
    if not 0 <= k < schedule.K:
        raise IndexOrderError(f"backward step index k={k} outside [0, {schedule.K - 1}]")
    d = denoise(denoiser, x_next, float(schedule.upsilon[k + 1]), context)
    mean = backward_mean(d, x_next, k, schedule)
    if noise is None:
        if rng is None:
            raise ValueError("backward_step needs rng or noise")
        noise = rng.standard_normal(x_next.shape)
    return mean + np.sqrt(schedule.eta2[k]) * noise


def backward_generate(M: int, shape: tuple[int, int], denoiser, schedule: NoiseSchedule, seed: int = 0,
                      *, workers: int = 1, context: Any = None) -> np.ndarray:
    """``M`` i.i.d. draws of the backward process started at ``N(0, sigma_max^2 I)``.

    Returns an array of shape ``(M, L, T)``. Noise for sample ``i`` at step
    ``k`` comes from its own counter-based stream, so the output is
    identical for any ``workers``.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    streams = seed if isinstance(seed, _rng.Streams) else _rng.Streams(seed)
    K = schedule.K

    def run(idx: range) -> np.ndarray:
        x = schedule.sigma_max * streams.normal(_rng.GENERATE, K, idx, shape)
        for k in range(K - 1, -1, -1):
            x = backward_step(x, k, denoiser, schedule, noise=streams.normal(_rng.GENERATE, k, idx, shape),
                              context=context)
        return x

    return map_chunks(run, M, workers)
