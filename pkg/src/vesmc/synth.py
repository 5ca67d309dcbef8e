"""Synthetic multichannel beats built from three Gaussian bumps per channel."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from .errors import ConfigurationError
from .gmm import GmmPrior


@dataclass
class BeatParams:
    """Shape parameters, times given as fractions of the window.

    The three waves are a small early bump, a sharp central spike and a
    broad late bump. ``correlation`` sets how much of each wave's amplitude
    jitter is shared by all channels.
    """

    centers: tuple[float, float, float] = (0.2, 0.3, 0.6)
    widths: tuple[float, float, float] = (0.03, 0.012, 0.06)
    amplitudes: tuple[float, float, float] = (0.15, 1.0, 0.3)
    jitter: float = 0.2
    correlation: float = 0.7
    window: tuple[float, float] = (0.25, 0.35)
    lead_gains: list[float] | None = field(default=None)

    @classmethod
    def from_dict(cls, d: dict | None) -> "BeatParams":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown beat parameters: {sorted(unknown)}")
        for key in ("centers", "widths", "amplitudes", "window"):
            if key in d:
                d[key] = tuple(float(v) for v in d[key])
        return cls(**d)

    def to_dict(self) -> dict:
        return {"centers": list(self.centers), "widths": list(self.widths), "amplitudes": list(self.amplitudes),
                "jitter": self.jitter, "correlation": self.correlation, "window": list(self.window),
                "lead_gains": self.lead_gains}


def synth_beat(L: int, T: int, params: BeatParams | None = None, rng: np.random.Generator | None = None) -> np.ndarray:
    """One ``(L, T)`` beat, each channel scaled to unit peak inside ``params.window``.

    Channels whose window is identically zero are left at zero.
    """
    if L < 1 or T < 1:
        raise ConfigurationError("L and T must be >= 1")
    p = params or BeatParams()
    rng = rng if rng is not None else np.random.default_rng()
    if not 0 <= p.correlation <= 1:
        raise ConfigurationError("correlation must lie in [0, 1]")
    gains = np.ones(L) if p.lead_gains is None else np.asarray(p.lead_gains, dtype=float)
    if gains.shape != (L,):
        raise ConfigurationError("need one gain per channel")
    t = np.linspace(0.0, 1.0, T)
    shared = rng.standard_normal(3)
    own = rng.standard_normal((L, 3))
    z = np.sqrt(p.correlation) * shared + np.sqrt(1 - p.correlation) * own
    amp = np.asarray(p.amplitudes)[None, :] * gains[:, None] * (1 + p.jitter * z)
    bumps = np.exp(-0.5 * ((t[None, :] - np.asarray(p.centers)[:, None]) / np.asarray(p.widths)[:, None]) ** 2)
    x = amp @ bumps
    lo, hi = p.window
    win = (t >= lo) & (t <= hi)
    if not win.any():
        win[np.argmin(np.abs(t - 0.5 * (lo + hi)))] = True
    peak = np.abs(x[:, win]).max(axis=1)
    scale = np.where(peak > 0, peak, 1.0)
    return x / scale[:, None]


def synth_prior(L: int, T: int, J: int, variance: float, params: BeatParams | None = None,
                seed: int | _rng.Streams = 0) -> GmmPrior:
    """Equal-weight mixture whose component means are independent synthetic beats."""
    if J < 1:
        raise ConfigurationError("J must be >= 1")
    streams = seed if isinstance(seed, _rng.Streams) else _rng.Streams(seed)
    means = np.stack([synth_beat(L, T, params, streams.generator(_rng.SYNTH, j)) for j in range(J)])
    return GmmPrior(np.full(J, 1.0 / J), means, np.full(J, float(variance)))
