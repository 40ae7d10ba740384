"""Deterministic task pool.

Work is always split into the same chunks regardless of the thread count and
results are gathered in submission order, so reductions downstream see
identical operands whatever the parallelism level.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")

ENV_THREADS = "RCMHOMOG_THREADS"


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        threads = int(os.environ.get(ENV_THREADS, "1"))
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    return threads


def chunk_ranges(n: int, chunk: int) -> list[range]:
    return [range(i, min(i + chunk, n)) for i in range(0, n, chunk)]


def ordered_map(fn: Callable[[T], R], items: Iterable[T], threads: int | None = None) -> list[R]:
    items = list(items)
    threads = resolve_threads(threads)
    if threads == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def concat(parts: Sequence[Sequence[R]]) -> list[R]:
    out: list[R] = []
    for p in parts:
        out.extend(p)
    return out
