"""Chunked thread-pool map over particle indices."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np


def max_workers() -> int:
    return os.cpu_count() or 1


def chunk_ranges(n: int, workers: int) -> list[range]:
    """Split ``range(n)`` into at most ``workers`` contiguous pieces."""
    workers = max(1, min(int(workers), n))
    bounds = np.linspace(0, n, workers + 1).astype(int)
    return [range(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def map_chunks(fn: Callable[[range], np.ndarray], n: int, workers: int = 1) -> np.ndarray:
    """Apply ``fn`` to index chunks and concatenate results along axis 0.

    Results are assembled in index order, so the output does not depend on
    ``workers`` as long as ``fn`` treats rows independently.
    """
    chunks = chunk_ranges(n, workers)
    if len(chunks) == 1:
        return fn(chunks[0])
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        parts = list(pool.map(fn, chunks))
    return np.concatenate(parts, axis=0)
