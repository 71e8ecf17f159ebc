"""Small argument checks used across the package.

They mirror the ``sklearn.utils.validation`` helpers in spirit: raise early
with a message naming the offending argument, return the value unchanged.
"""
import math
import numbers

import numpy as np


def check_scalar_finite(x, name):
    if isinstance(x, bool) or not isinstance(x, (numbers.Real, np.floating, np.integer)):
        raise TypeError(f"{name} must be a real number, got {type(x).__name__}")
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"{name} must be finite, got {x}")
    return x


def check_positive(x, name):
    x = check_scalar_finite(x, name)
    if x <= 0:
        raise ValueError(f"{name} must be > 0, got {x}")
    return x


def check_non_negative(x, name):
    x = check_scalar_finite(x, name)
    if x < 0:
        raise ValueError(f"{name} must be >= 0, got {x}")
    return x


def check_probability(x, name, *, upper_open=False):
    x = check_scalar_finite(x, name)
    if x < 0 or x > 1 or (upper_open and x == 1):
        bound = "[0, 1)" if upper_open else "[0, 1]"
        raise ValueError(f"{name} must lie in {bound}, got {x}")
    return x


def check_samples(samples, name="samples"):
    """Return ``samples`` as a non-empty 1-D float array of finite values."""
    arr = np.asarray(samples, dtype=float).ravel()
    if arr.size == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr
