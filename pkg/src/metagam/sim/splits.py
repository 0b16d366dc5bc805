"""Splitting one dataset into cohorts."""
from __future__ import annotations

from typing import List

import numpy as np
import pandas as pd

from .scenarios import BASE_TOTAL, UNEQUAL_SIZES


def scaled_sizes(n_total: int, sizes=UNEQUAL_SIZES, base: int = BASE_TOTAL) -> List[int]:
    """``sizes`` rescaled to sum to ``n_total`` (the last cohort takes the rounding slack)."""
    out = [int(round(s * n_total / base)) for s in sizes[:-1]]
    out.append(n_total - sum(out))
    return out


def equal_split(n: int, k: int, rng) -> List[np.ndarray]:
    """Random partition into ``k`` parts of (nearly) equal size."""
    return [np.sort(p) for p in np.array_split(rng.permutation(n), k)]


def sized_split(n: int, sizes, rng) -> List[np.ndarray]:
    perm = rng.permutation(n)
    return [np.sort(p) for p in np.split(perm, np.cumsum(sizes)[:-1])]


def range_split(data: pd.DataFrame, sizes, rng, first="x2", second="x1", cut=0.5) -> List[np.ndarray]:
    """Cohorts with restricted covariate ranges.

    Cohort 1 draws ``sizes[0]`` rows with ``first < cut``, cohort 2 ``sizes[1]``
    of the remaining rows with ``first >= cut``, cohorts 3 and 4 do the same
    for ``second``, and cohort 5 takes whatever is left.
    """
    remaining = np.arange(len(data))
    parts = []
    rules = [(first, True), (first, False), (second, True), (second, False)]
    for size, (col, below) in zip(sizes[:4], rules):
        v = data[col].to_numpy()[remaining]
        pool = remaining[v < cut] if below else remaining[v >= cut]
        if pool.size < size:
            raise ValueError(f"only {pool.size} rows available for a {col} {'<' if below else '>='} "
                             f"{cut} cohort of {size}")
        pick = np.sort(rng.choice(pool, size, replace=False))
        parts.append(pick)
        remaining = np.setdiff1d(remaining, pick, assume_unique=True)
    parts.append(remaining)
    return parts


def check_partition(parts, n: int) -> None:
    """Raise unless ``parts`` cover ``range(n)`` exactly once."""
    allidx = np.concatenate(parts) if parts else np.empty(0, dtype=int)
    if allidx.size != n or not np.array_equal(np.sort(allidx), np.arange(n)):
        raise AssertionError("cohorts do not partition the dataset")
