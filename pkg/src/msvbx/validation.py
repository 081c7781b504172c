"""Small input-validation helpers shared by the estimators and core ops."""

import numpy as np


def as_float_array(x, name, ndim=None):
    """Convert to a float64 ndarray, optionally enforcing dimensionality."""
    arr = np.asarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    return arr


def check_unit_interval(x, name, open_left=False, open_right=False):
    lo_ok = x > 0.0 if open_left else x >= 0.0
    hi_ok = x < 1.0 if open_right else x <= 1.0
    if not (lo_ok and hi_ok):
        lo = "(" if open_left else "["
        hi = ")" if open_right else "]"
        raise ValueError(f"{name} must lie in {lo}0, 1{hi}, got {x}")
    return float(x)


def check_positive(x, name):
    if not x > 0:
        raise ValueError(f"{name} must be positive, got {x}")
    return x


def check_activities(activities):
    """Validate a (chunks, streams, frames) activity tensor with values in [0, 1]."""
    arr = as_float_array(activities, "activities", ndim=3)
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError("activity values must lie in [0, 1]")
    return arr
