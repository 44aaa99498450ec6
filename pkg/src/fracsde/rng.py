"""Seed streams and chunk-parallel execution.

A master seed is split into named streams (``fbm``, ``bm``, ``regression``).
Path ``p`` of stream ``name`` is always drawn from its own Philox generator
keyed by ``(seed, name, p)``. Any subset of paths can therefore be regenerated
on its own, and the output does not depend on how work is split into chunks
or threads.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

__all__ = ["CHUNK_SIZE", "STREAMS", "stream", "resolve_threads", "chunks", "map_chunks"]

CHUNK_SIZE = 256
STREAMS = {"fbm": 0, "bm": 1, "regression": 2, "aux": 3}

T = TypeVar("T")


def stream(seed: int, name: str, index: int = 0) -> np.random.Generator:
    """Counter-based generator for path ``index`` of a named stream."""
    if name not in STREAMS:
        raise KeyError(f"unknown stream {name!r}; expected one of {sorted(STREAMS)}")
    if seed < 0 or index < 0:
        raise ValueError("seed and index must be non-negative")
    ss = np.random.SeedSequence(int(seed), spawn_key=(STREAMS[name], int(index)))
    return np.random.Generator(np.random.Philox(ss))


def resolve_threads(threads: int | None = None) -> int:
    """Explicit value, else ``FRACSDE_THREADS``, else 1."""
    if threads is None:
        env = os.environ.get("FRACSDE_THREADS")
        threads = int(env) if env else 1
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    return threads


def chunks(first: int, count: int, size: int = CHUNK_SIZE) -> list[range]:
    """Split paths ``[first, first + count)`` into consecutive ranges of at most ``size``."""
    if count < 1 or first < 0:
        raise ValueError("need count >= 1 and first >= 0")
    stop = first + count
    return [range(a, min(a + size, stop)) for a in range(first, stop, size)]


def map_chunks(fn: Callable[[range], T], parts: Sequence[range], threads: int | None = None) -> list[T]:
    """Evaluate ``fn`` on each chunk; results come back in chunk order."""
    n = resolve_threads(threads)
    if n == 1 or len(parts) == 1:
        return [fn(p) for p in parts]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, parts))
