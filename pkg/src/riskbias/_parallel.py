"""Ordered map over a process pool; results never depend on the worker count."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

ENV_THREADS = "RISKBIAS_THREADS"


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(ENV_THREADS, "1")))
    except ValueError:
        return 1


def ordered_map(func, items, workers: int | None = None, chunksize: int = 1):
    items = list(items)
    workers = default_workers() if workers is None else max(1, int(workers))
    cap = os.environ.get(ENV_THREADS)
    if cap and cap.isdigit():
        workers = min(workers, max(1, int(cap)))
    if workers == 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(func, items, chunksize=chunksize))
