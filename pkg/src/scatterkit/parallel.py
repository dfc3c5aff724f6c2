"""Order-preserving worker pool for independent per-item work.

The CLI sets the cap from ``--threads``.  Results come back in input order and
each item is computed independently, so any cap gives identical output.
"""
from __future__ import annotations

import contextlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")

_workers = 1


def workers() -> int:
    return _workers


def set_workers(n: int):
    global _workers
    if n < 1:
        raise ValueError("worker count must be >= 1")
    _workers = int(n)


@contextlib.contextmanager
def worker_limit(n: int):
    prev = _workers
    set_workers(n)
    try:
        yield
    finally:
        set_workers(prev)


def pmap(fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
    items = list(items)
    if _workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(_workers, len(items))) as pool:
        return list(pool.map(fn, items))
