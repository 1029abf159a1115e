"""Input validation helpers shared by the estimators and functional APIs."""

import numpy as np
from sklearn.utils import check_array


class ValidationError(ValueError):
    """Raised when inputs violate a documented precondition."""


class NumericalError(FloatingPointError):
    """Raised when a computation cannot produce a finite result."""


def check_vector(x, dim=None, name="x"):
    """Return ``x`` as a finite 1-D float64 array, optionally of length ``dim``."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValidationError(f"{name} must be a non-empty 1-D vector, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ValidationError(f"{name} has dimension {arr.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains NaN or Inf")
    return arr


def check_matrix(X, n_features=None, min_samples=1, name="X"):
    """Return ``X`` as a finite 2-D float64 array.

    1-D input is read as a single feature column, which is the convenient
    reading for the scalar tuple slots used by the density estimators.
    """
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    try:
        arr = check_array(arr, dtype=np.float64, ensure_min_samples=min_samples)
    except ValueError as exc:
        raise ValidationError(f"{name}: {exc}") from exc
    if n_features is not None and arr.shape[1] != n_features:
        raise ValidationError(f"{name} has {arr.shape[1]} features, expected {n_features}")
    return arr


def check_positive(value, name):
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ValidationError(f"{name} must be a positive finite number, got {value}")
    return value


def check_nonnegative(value, name):
    value = float(value)
    if not np.isfinite(value) or value < 0:
        raise ValidationError(f"{name} must be non-negative, got {value}")
    return value
