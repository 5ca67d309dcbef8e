"""Counter-based random streams.

Every random draw in the package is addressed by ``(tag, step, particle)``
under a master seed, using the Philox counter-based bit generator. The
values a particle receives at a given step therefore do not depend on how
particles are chunked across worker threads or on the order in which
chunks are processed.
"""

from __future__ import annotations

from collections.abc import Iterable

import numpy as np

# Stream tags. Distinct tags never share a Philox counter.
INIT = 0
RESAMPLE = 1
PROPOSE = 2
OBSERVE = 3
SAMPLE = 4
FORWARD = 5
GENERATE = 6
SYNTH = 7
COMPONENT = 8

_NO_PARTICLE = 2**63


class Streams:
    """Factory of independent, reproducible random streams.

    Parameters
    ----------
    seed : int
        Master seed (any non-negative integer up to 2**64 - 1).
    path : tuple of int, optional
        Extra words mixed into the key; used by :meth:`spawn` to derive
        child stream families (e.g. one per MLE chain).
    """

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self._key = ss.generate_state(2, np.uint64)

    def __repr__(self) -> str:
        return f"Streams(seed={self.seed}, path={self.path})"

    def spawn(self, *words: int) -> "Streams":
        """Child family keyed by ``path + words``."""
        return Streams(self.seed, self.path + tuple(words))

    def generator(self, tag: int, step: int = 0, particle: int = _NO_PARTICLE) -> np.random.Generator:
        """A fresh generator positioned at the start of stream ``(tag, step, particle)``."""
        counter = np.array([0, particle, step, tag], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=self._key, counter=counter))

    def normal(self, tag: int, step: int, particles: Iterable[int], shape: tuple[int, ...]) -> np.ndarray:
        """Standard normal block of shape ``(len(particles), *shape)``.

        Row ``i`` is drawn from the stream of particle ``particles[i]``.
        """
        idx = list(particles)
        out = np.empty((len(idx),) + tuple(shape))
        # one bit generator per call, repositioned per particle (cheaper than rebuilding it)
        bitgen = np.random.Philox(key=self._key)
        gen = np.random.Generator(bitgen)
        state = bitgen.state
        for row, p in enumerate(idx):
            state["state"]["counter"] = np.array([0, p, step, tag], dtype=np.uint64)
            state["buffer_pos"] = 4
            state["has_uint32"] = 0
            bitgen.state = state
            out[row] = gen.standard_normal(shape)
        return out
