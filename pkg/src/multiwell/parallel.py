"""Seeded streams and a thread-count independent map.

Every stochastic item draws from its own generator keyed by (seed, item), so
splitting work across threads never changes the numbers.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for the item addressed by ``key`` under ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def max_threads() -> int:
    raw = os.environ.get("MRL_THREADS", "")
    try:
        val = int(raw)
    except ValueError:
        return 1
    return max(1, val)


def pmap(fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
    """Ordered map; runs on up to MRL_THREADS threads."""
    items = list(items)
    k = min(max_threads(), len(items))
    if k <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=k) as ex:
        return list(ex.map(fn, items))


def chunks(total: int, size: int) -> Sequence[tuple[int, int, int]]:
    """(chunk_index, start, stop) triples; layout depends only on ``size``."""
    return [(c, s, min(s + size, total)) for c, s in enumerate(range(0, total, size))]
