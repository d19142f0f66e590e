"""Input validation helpers used by the estimator classes and pipeline ops."""

from __future__ import annotations

import numpy as np

from .errors import DataError, NumericalError

__all__ = ["as_float_array", "check_finite", "check_weight_vector", "check_window_batch"]


def as_float_array(x, name: str = "array", ndim: int | None = None) -> np.ndarray:
    """Coerce to a float64 ndarray, checking rank and finiteness."""
    arr = np.asarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise DataError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    check_finite(arr, name)
    return arr


def check_finite(arr: np.ndarray, name: str = "array") -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"{name} contains NaN or infinite values")


def check_weight_vector(w, n_assets: int | None = None, atol: float = 1e-9) -> np.ndarray:
    """Validate a long-only weight vector: nonnegative, summing to one."""
    arr = as_float_array(w, "weights", ndim=1)
    if n_assets is not None and arr.size != n_assets:
        raise DataError(f"expected {n_assets} weights, got {arr.size}")
    if arr.size == 0:
        raise DataError("weight vector is empty")
    if np.any(arr < -atol):
        raise DataError(f"weights must be nonnegative, got min {arr.min():.3g}")
    if abs(arr.sum() - 1.0) > atol:
        raise DataError(f"weights must sum to 1, got {arr.sum():.12g}")
    return arr


def check_window_batch(X, lookback: int, n_features: int, name: str = "X") -> np.ndarray:
    """Validate a (samples, lookback, features) window batch."""
    arr = as_float_array(X, name, ndim=3)
    if arr.shape[1] != lookback or arr.shape[2] != n_features:
        raise DataError(
            f"{name} must have shape (n, {lookback}, {n_features}), got {arr.shape}"
        )
    return arr
