"""Small input-validation helpers used across the package."""

from __future__ import annotations

import numbers

import numpy as np

from .exceptions import ParameterError, ShapeError


def check_int(name: str, value, minimum: int | None = None, maximum: int | None = None) -> int:
    """Return ``value`` as an int after range checks."""
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ParameterError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise ParameterError(f"{name} must be >= {minimum}, got {value}")
    if maximum is not None and value > maximum:
        raise ParameterError(f"{name} must be <= {maximum}, got {value}")
    return value


def check_real(
    name: str,
    value,
    low: float | None = None,
    high: float | None = None,
    *,
    low_open: bool = False,
    high_open: bool = False,
    allow_inf: bool = False,
) -> float:
    """Return ``value`` as a float after interval checks."""
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise ParameterError(f"{name} must be a real number, got {value!r}")
    value = float(value)
    if np.isnan(value) or (np.isinf(value) and not allow_inf):
        raise ParameterError(f"{name} must be finite, got {value}")
    if low is not None and (value < low or (low_open and value == low)):
        raise ParameterError(f"{name}={value} outside admissible range (low={low})")
    if high is not None and (value > high or (high_open and value == high)):
        raise ParameterError(f"{name}={value} outside admissible range (high={high})")
    return value


def check_vector(name: str, x, dim: int | None = None) -> np.ndarray:
    """Return ``x`` as a 1-d float64 array of optional length ``dim``."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-d, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ShapeError(f"{name} must have length {dim}, got {arr.shape[0]}")
    return arr


def check_rows(name: str, x, dim: int | None = None) -> np.ndarray:
    """Return ``x`` as a 2-d float64 array, promoting a single vector to one row."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 1-d or 2-d, got shape {arr.shape}")
    if dim is not None and arr.shape[1] != dim:
        raise ShapeError(f"{name} must have {dim} columns, got {arr.shape[1]}")
    return arr


def check_matrix(name: str, x, shape: tuple | None = None) -> np.ndarray:
    """Return ``x`` as a 2-d float64 array with an optional exact shape."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-d, got shape {arr.shape}")
    if shape is not None and arr.shape != tuple(shape):
        raise ShapeError(f"{name} must have shape {tuple(shape)}, got {arr.shape}")
    return arr


def frozen(arr: np.ndarray) -> np.ndarray:
    """Return a read-only copy of ``arr``."""
    out = np.array(arr, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out
