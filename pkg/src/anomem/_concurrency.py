"""Small helpers for bounded, order-preserving parallel evaluation."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")

THREADS_ENV = "ANOMEM_THREADS"


def resolve_threads(requested: int | None = None) -> int:
    """Worker count: requested (0/None = machine cores) capped by ANOMEM_THREADS."""
    base = requested if requested and requested > 0 else (os.cpu_count() or 1)
    cap_raw = os.environ.get(THREADS_ENV, "").strip()
    if cap_raw:
        try:
            cap = int(cap_raw)
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {cap_raw!r}") from None
        if cap >= 1:
            base = min(base, cap)
    return max(1, base)


def map_ordered(fn: Callable[[T], R], items: Sequence[T], workers: int = 1) -> list[R]:
    """Apply fn to every item; results come back in input order.

    Work items must be independent. With workers <= 1 this is a plain
    loop, which keeps tracebacks simple.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))
