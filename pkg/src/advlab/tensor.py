"""Small tensor helpers: canonical dtype/layout and common conversions.

All numeric data in the package is 64-bit float, row-major (C order).
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError, ShapeError


def as_tensor(data, shape=None) -> np.ndarray:
    """Coerce `data` to a C-contiguous float64 array with finite entries."""
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if shape is not None and tuple(arr.shape) != tuple(shape):
        raise ShapeError(f"expected shape {tuple(shape)}, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise NumericError("tensor contains NaN or Inf")
    return arr


def one_hot(labels, class_count: int) -> np.ndarray:
    """Integer labels [N] -> one-hot float matrix [N, class_count]."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1:
        raise ShapeError(f"labels must be 1-D, got shape {labels.shape}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= class_count:
        raise ShapeError("label outside [0, class_count)")
    out = np.zeros((labels.size, class_count), dtype=np.float64)
    out[np.arange(labels.size), labels] = 1.0
    return out


def l2_distance(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm((a - b).ravel()))


def linf_distance(a: np.ndarray, b: np.ndarray) -> float:
    d = np.abs(a - b)
    return float(d.max()) if d.size else 0.0
