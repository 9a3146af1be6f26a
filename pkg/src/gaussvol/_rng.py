"""Reproducible batched random streams.

Each fixed-size batch draws from its own Philox stream keyed by
``(seed, batch_index)``, so results do not depend on how batches are spread
over threads.
"""

from __future__ import annotations

import math
import os
from collections.abc import Callable, Iterable
from concurrent.futures import ThreadPoolExecutor
from typing import TypeVar

import numpy as np

T = TypeVar("T")

THREADS_ENV = "GAUSSVOL_THREADS"


def batch_generator(seed: int, batch: int, stream: int = 0) -> np.random.Generator:
    """Generator for batch ``batch`` of stream ``stream`` under ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(stream, batch))))


def batch_sizes(total: int, batch_size: int) -> list[int]:
    full, rest = divmod(total, batch_size)
    return [batch_size] * full + ([rest] if rest else [])


def resolve_threads(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get(THREADS_ENV, "1") or 1)
    return max(1, int(threads))


def map_batches(fn: Callable[[int], T], count: int, threads: int | None = None) -> list[T]:
    """Apply ``fn`` to batch indices ``0..count-1`` and return results in index order."""
    workers = min(resolve_threads(threads), max(count, 1))
    if workers == 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(count)))


def exact_sum(values: Iterable[float]) -> float:
    """Order-independent, correctly rounded sum of batch partials."""
    return math.fsum(values)
