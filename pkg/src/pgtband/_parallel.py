from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def n_threads() -> int:
    """Worker cap from ``PGT_THREADS``; defaults to the CPU count, at most 8."""
    env = os.environ.get("PGT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"PGT_THREADS must be an integer, got {env!r}") from None
    return max(1, min(8, os.cpu_count() or 1))


def ordered_map(fn, items) -> list:
    """``list(map(fn, items))``, possibly threaded; output order is input order."""
    items = list(items)
    workers = min(n_threads(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
