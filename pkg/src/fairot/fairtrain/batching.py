"""Mini-batches that contain every level of the legitimate feature."""

from __future__ import annotations

import numpy as np

from ..errors import InvalidInput


def stratified_batches(levels, batch_size, seed=0, sensitive=None):
    """Row-index batches for one epoch.

    The number of batches is ceil(n / batch_size), capped by the size of
    the rarest level so that each batch holds at least one row of every
    level.  Inside each level rows are shuffled (A=0 rows before A=1 rows
    when ``sensitive`` is given, so both groups spread evenly) and dealt
    round-robin over the batches.  ``seed`` may be an int or a
    ``numpy.random.Generator``.
    """
    lv = np.asarray(levels)
    n = lv.size
    if n == 0:
        raise InvalidInput("no rows to batch")
    if batch_size < 1:
        raise InvalidInput("batch_size must be positive")
    ids, counts = np.unique(lv, return_counts=True)
    if batch_size < ids.size:
        raise InvalidInput(f"batch_size {batch_size} is smaller than the number of levels {ids.size}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n_batches = max(1, min(-(-n // batch_size), int(counts.min())))
    buckets = [[] for _ in range(n_batches)]
    pos = 0
    for l in ids:
        rows = np.flatnonzero(lv == l)
        if sensitive is not None:
            A = np.asarray(sensitive)[rows]
            parts = [rows[A == 0], rows[A == 1]]
            order = np.concatenate([p[rng.permutation(p.size)] for p in parts])
        else:
            order = rows[rng.permutation(rows.size)]
        for r in order:
            buckets[pos % n_batches].append(r)
            pos += 1
    perm = rng.permutation(n_batches)
    return [np.sort(np.asarray(buckets[b], dtype=np.int64)) for b in perm]
