"""Input validation helpers used by the estimators and the CLI."""
from __future__ import annotations

from typing import Iterable

import numpy as np
import pandas as pd

from .exceptions import EmptyInput, LengthMismatch, MissingColumn, NonFiniteData, NonFiniteInput


def as_float_vector(x, name="x", allow_empty=False) -> np.ndarray:
    """Return ``x`` as a finite 1-d float array or raise."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0 and not allow_empty:
        raise EmptyInput(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr))[0])
        raise NonFiniteInput(f"{name} contains a non-finite value at position {bad}")
    return arr


def check_same_length(a, b, names=("a", "b")):
    if len(a) != len(b):
        raise LengthMismatch(f"{names[0]} has length {len(a)} but {names[1]} has length {len(b)}")


def check_table(data, columns: Iterable[str], numeric: Iterable[str] = ()) -> pd.DataFrame:
    """Check that ``data`` is a table holding ``columns`` without missing values.

    Columns in ``numeric`` must additionally be finite numbers. Errors name the
    first offending row (0-based data row index).
    """
    if isinstance(data, dict):
        data = pd.DataFrame(data)
    if not isinstance(data, pd.DataFrame):
        raise TypeError(f"expected a pandas DataFrame or dict of columns, got {type(data).__name__}")
    if len(data) == 0:
        raise EmptyInput("data table has no rows")
    for col in columns:
        if col not in data.columns:
            raise MissingColumn(col)
        values = data[col]
        missing = values.isna().to_numpy()
        if missing.any():
            row = int(np.flatnonzero(missing)[0])
            raise NonFiniteData(f"missing value in column {col!r} at row {row}")
    for col in numeric:
        values = data[col]
        if not pd.api.types.is_numeric_dtype(values):
            raise NonFiniteData(f"column {col!r} must be numeric")
        arr = values.to_numpy(dtype=float)
        bad = ~np.isfinite(arr)
        if bad.any():
            raise NonFiniteData(f"non-finite value in column {col!r} at row {int(np.flatnonzero(bad)[0])}")
    return data
