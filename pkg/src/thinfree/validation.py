"""Small input-validation helpers shared by the estimators and pipelines."""

import numbers

import numpy as np


def check_points(X, dim=None):
    """Return ``X`` as a finite 2-D float array of shape ``(n, dim)``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None] if dim in (None, 1) else X.reshape(-1, dim)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D array of points, got shape {X.shape}")
    if dim is not None and X.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("points must be finite")
    return X


def check_scalar(x, name, lo=None, hi=None, lo_open=False, hi_open=False, integer=False):
    """Validate a scalar against an interval and return it."""
    kind = numbers.Integral if integer else numbers.Real
    if isinstance(x, bool) or not isinstance(x, kind):
        raise TypeError(f"{name} must be {'an integer' if integer else 'a real number'}, got {x!r}")
    if not np.isfinite(x):
        raise ValueError(f"{name} must be finite")
    if lo is not None and (x < lo or (lo_open and x == lo)):
        raise ValueError(f"{name}={x} is below the allowed range")
    if hi is not None and (x > hi or (hi_open and x == hi)):
        raise ValueError(f"{name}={x} is above the allowed range")
    return x


def check_grid_array(a, shape, name):
    a = np.asarray(a, dtype=float)
    if a.shape != tuple(shape):
        raise ValueError(f"{name} has shape {a.shape}, expected {tuple(shape)}")
    return a
