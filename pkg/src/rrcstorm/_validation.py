"""Small input-validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np


def check_probability(value: float, name: str, *, open_low: bool = True, open_high: bool = True) -> float:
    value = float(value)
    low_ok = value > 0 if open_low else value >= 0
    high_ok = value < 1 if open_high else value <= 1
    if not (low_ok and high_ok) or not np.isfinite(value):
        lo = "(" if open_low else "["
        hi = ")" if open_high else "]"
        raise ValueError(f"{name} must lie in {lo}0, 1{hi}, got {value}")
    return value


def check_positive_int(value: int, name: str, *, allow_zero: bool = False) -> int:
    if isinstance(value, bool) or int(value) != value:
        raise ValueError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if value < 0 or (value == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        raise ValueError(f"{name} must be {bound}, got {value}")
    return value


def check_1d(X, name: str = "X", *, dtype=float, min_len: int = 0) -> np.ndarray:
    """Coerce ``X`` to a finite 1-D array, accepting a single-column 2-D input."""
    arr = np.asarray(X, dtype=dtype)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or infinite values")
    if arr.size < min_len:
        raise ValueError(f"{name} needs at least {min_len} samples, got {arr.size}")
    return arr


def check_traffic(X, *, min_len: int = 0) -> np.ndarray:
    """Validate an ``(n, 3)`` array of per-second ``msg3, msg5, n_bue`` counts."""
    arr = np.asarray(X)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"traffic must have shape (n, 3) [msg3, msg5, n_bue], got {arr.shape}")
    arr = arr.astype(np.int64, copy=False)
    if (arr < 0).any():
        raise ValueError("traffic counts must be non-negative")
    if arr.shape[0] < min_len:
        raise ValueError(f"traffic needs at least {min_len} rows, got {arr.shape[0]}")
    return arr
