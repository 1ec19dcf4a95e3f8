"""Block-parallel Monte Carlo with worker-count independent results.

Replications are grouped in fixed blocks of ``BLOCK`` rows and block ``b``
always draws from ``stream.child("block", b)``.  The grouping depends only
on the replication count, so results are identical for any number of
workers and any completion order.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional

import numpy as np

from .models import RandomStream

BLOCK = 256


def worker_count(requested: Optional[int] = None) -> int:
    cap = os.environ.get("TTL_THREADS")
    n = requested or os.cpu_count() or 1
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def _blocks(n_reps: int):
    return [(b, min(BLOCK, n_reps - start)) for b, start in enumerate(range(0, n_reps, BLOCK))]


def map_blocks(
    stream: RandomStream,
    n_reps: int,
    fn: Callable[[np.random.Generator, int], np.ndarray],
    workers: Optional[int] = None,
) -> np.ndarray:
    """Concatenate ``fn(generator, rows)`` over the replication blocks."""
    jobs = _blocks(int(n_reps))

    def run(job):
        b, rows = job
        return np.asarray(fn(stream.child("block", b).generator(), rows))

    nw = worker_count(workers)
    if nw == 1 or len(jobs) == 1:
        parts = [run(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=nw) as pool:
            parts = list(pool.map(run, jobs))
    return np.concatenate(parts, axis=0)


def standard_normal_matrix(stream: RandomStream, n_reps: int, d: int, workers: Optional[int] = None) -> np.ndarray:
    """(n_reps, d) standard normals, reusable as common random numbers."""
    return map_blocks(stream, n_reps, lambda g, rows: g.standard_normal((rows, d)), workers)


def rate_and_stderr(hits: np.ndarray) -> tuple[float, float]:
    hits = np.asarray(hits, dtype=bool)
    r = float(hits.mean())
    return r, float(np.sqrt(r * (1 - r) / hits.size))
