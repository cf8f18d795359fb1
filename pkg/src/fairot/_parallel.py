"""Thread-pool helper bounded by the ``FAIROT_THREADS`` environment variable."""

import os
from concurrent.futures import ThreadPoolExecutor

ENV_THREADS = "FAIROT_THREADS"


def max_workers(requested=None):
    """Pool size: ``requested`` capped by ``FAIROT_THREADS``; serial when neither is set."""
    cap = os.environ.get(ENV_THREADS, "").strip()
    limit = max(1, int(cap)) if cap else None
    if requested is None:
        return limit or 1
    requested = max(1, int(requested))
    return min(requested, limit) if limit else requested


def pmap(fn, items, n_jobs=None):
    """Ordered map; runs in a thread pool when more than one worker is allowed.

    Kernels release the GIL, so threads give real parallelism on the numba path.
    """
    items = list(items)
    workers = max_workers(n_jobs)
    if workers == 1 or len(items) < 2:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
