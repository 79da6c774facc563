"""Chunked evaluation with an optional thread pool.

Work is always split at the same row boundaries and reassembled in order, so
results are identical for any thread count. Thread count comes from the
caller, else ``CURVEFLOW_THREADS``, else 1.
"""

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def resolve_threads(threads=None) -> int:
    if threads is None:
        threads = os.environ.get("CURVEFLOW_THREADS", "1")
    try:
        n = int(threads)
    except (TypeError, ValueError):
        n = 1
    return max(n, 1)


def map_chunks(fn, array, chunk=1024, threads=None):
    array = np.asarray(array)
    pieces = [array[i : i + chunk] for i in range(0, max(len(array), 1), chunk)]
    n = resolve_threads(threads)
    if n == 1 or len(pieces) == 1:
        return [fn(p) for p in pieces]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, pieces))
