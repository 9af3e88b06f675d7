"""Process-wide worker pool for independent circuit evaluations.

Work is always split the same way regardless of the worker count and
results are returned in submission order, so any thread count gives
bit-identical output.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

_threads = 1
_pool: ThreadPoolExecutor | None = None


def set_threads(n: int) -> None:
    global _threads, _pool
    if n < 1:
        raise ValueError(f"thread count must be positive, got {n}")
    if _pool is not None:
        _pool.shutdown()
        _pool = None
    _threads = n


def get_threads() -> int:
    return _threads


def map_ordered(fn, items):
    items = list(items)
    if _threads == 1 or len(items) < 2:
        return [fn(item) for item in items]
    global _pool
    if _pool is None:
        _pool = ThreadPoolExecutor(max_workers=_threads)
    return list(_pool.map(fn, items))
