"""Replication scheduling with per-replication random streams."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from ..exceptions import ReplicationError

THREADS_ENV = "METAGAM_THREADS"


def thread_count() -> int:
    """Worker cap from ``METAGAM_THREADS`` (default: all CPUs)."""
    raw = os.environ.get(THREADS_ENV, "").strip()
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    return os.cpu_count() or 1


@dataclass(frozen=True)
class _Failure:
    replication: int
    message: str


def _call(worker: Callable, scenario, replication: int, seed_seq):
    try:
        return worker(scenario, replication, np.random.default_rng(seed_seq))
    except Exception as exc:  # reported with the replication index by the caller
        return _Failure(replication, f"{type(exc).__name__}: {exc}")


def run_replications(worker: Callable, scenario, replications: int, seed: int,
                     threads: int = None) -> List:
    """Run ``worker(scenario, r, rng)`` for ``r = 0..replications-1``.

    Each replication gets its own generator spawned from ``seed``, so results
    do not depend on the number of workers or on completion order.

    Raises
    ------
    ReplicationError
        For the lowest-numbered replication that failed.
    """
    children = np.random.SeedSequence(seed).spawn(replications)
    threads = min(threads or thread_count(), replications)
    if threads <= 1:
        results = [_call(worker, scenario, r, children[r]) for r in range(replications)]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_call, [worker] * replications, [scenario] * replications,
                                    range(replications), children,
                                    chunksize=max(1, replications // (4 * threads))))
    for res in results:
        if isinstance(res, _Failure):
            raise ReplicationError(res.replication, res.message)
    return results
