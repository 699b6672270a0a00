"""Small input-validation helpers for the array-facing surfaces."""

from __future__ import annotations

import numpy as np

from .errors import NumericError, ShapeError


def check_observations(X, d_img: int, name: str = "X") -> np.ndarray:
    """Coerce to a finite 2-D float array of width ``d_img``."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != d_img:
        raise ShapeError(f"{name} must have shape (n, {d_img}), got {np.asarray(X).shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite values")
    return arr
