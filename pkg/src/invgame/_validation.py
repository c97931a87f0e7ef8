"""Input validation helpers.

Thin wrappers over :func:`sklearn.utils.validation.check_array` that
raise :class:`~invgame.exceptions.DimensionError` with shapes spelled out,
so callers get one exception type for every dimension mismatch.
"""

import numbers

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import DimensionError


def as_vector(x, dim=None, name="x"):
    """Return ``x`` as a finite 1-d float array, optionally of length ``dim``."""
    try:
        arr = check_array(np.atleast_1d(np.asarray(x, dtype=float)),
                          ensure_2d=False, dtype=float, input_name=name)
    except ValueError as exc:
        raise DimensionError(f"{name}: {exc}") from exc
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be 1-d, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise DimensionError(f"{name} must have length {dim}, got {arr.shape[0]}")
    return arr


def as_points(X, dim=None, name="X"):
    """Return ``X`` as a 2-d float array of shape (n_points, dim).

    A 1-d input is read as a single point when ``dim`` matches its length,
    and as a column of scalar points when ``dim == 1``.
    """
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        if dim == 1:
            arr = arr[:, None]
        else:
            arr = arr[None, :]
    try:
        arr = check_array(arr, dtype=float, input_name=name)
    except ValueError as exc:
        raise DimensionError(f"{name}: {exc}") from exc
    if dim is not None and arr.shape[1] != dim:
        raise DimensionError(f"{name} must have {dim} columns, got {arr.shape[1]}")
    return arr


def as_square(M, dim=None, name="M"):
    arr = np.atleast_2d(np.asarray(M, dtype=float))
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise DimensionError(f"{name} must be {dim}x{dim}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_fraction(value, name, inclusive=False):
    if not isinstance(value, numbers.Real):
        raise TypeError(f"{name} must be a real number")
    ok = 0 <= value <= 1 if inclusive else 0 < value < 1
    if not ok:
        bounds = "[0, 1]" if inclusive else "(0, 1)"
        raise ValueError(f"{name} must lie in {bounds}, got {value}")
    return float(value)


def check_positive(value, name):
    if not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be positive, got {value}")
    return value
