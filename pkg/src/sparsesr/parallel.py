"""Deterministic chunked parallelism.

Work is always split into the same fixed-size column chunks, whatever
the thread count, and BLAS runs single-threaded inside workers. Results
are therefore bit-identical for any ``threads`` value.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager

from threadpoolctl import threadpool_limits

CHUNK = 1024


def default_threads() -> int:
    env = os.environ.get("SR_THREADS")
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ValueError(f"SR_THREADS must be an integer, got {env!r}") from None
        if value >= 1:
            return value
    return os.cpu_count() or 1


def chunk_bounds(n: int, chunk: int = CHUNK) -> list[tuple[int, int]]:
    return [(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]


def map_chunks(fn, n: int, threads: int | None = None, chunk: int = CHUNK) -> list:
    """Apply ``fn(lo, hi)`` to each chunk of ``range(n)``, results in chunk order."""
    bounds = chunk_bounds(n, chunk)
    threads = default_threads() if threads is None else max(1, int(threads))
    with single_threaded_blas():
        if threads == 1 or len(bounds) <= 1:
            return [fn(lo, hi) for lo, hi in bounds]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda b: fn(*b), bounds))


@contextmanager
def single_threaded_blas():
    with threadpool_limits(limits=1, user_api="blas"):
        yield
