"""Input validation helpers in the spirit of ``sklearn.utils.validation``."""

import math
import numbers

import numpy as np

from .errors import CapacityError, ValidationError

MAX_DIMS = 5


def check_dims(dims):
    if not isinstance(dims, numbers.Integral) or isinstance(dims, bool):
        raise ValidationError(f"dims must be an integer, got {dims!r}")
    if dims < 2:
        raise ValidationError(f"dims must be >= 2, got {dims}")
    if dims > MAX_DIMS:
        raise CapacityError(
            f"dims={dims} exceeds the supported maximum {MAX_DIMS}",
            parameter="dims",
            limit=MAX_DIMS,
        )
    return int(dims)


def check_beta(beta):
    try:
        beta = float(beta)
    except (TypeError, ValueError):
        raise ValidationError(f"beta must be a real number, got {beta!r}") from None
    if not math.isfinite(beta) or beta < 0:
        raise ValidationError(f"beta must be finite and >= 0, got {beta}")
    return beta


def check_nonneg_int(value, name, minimum=0):
    if not isinstance(value, numbers.Integral) or isinstance(value, bool):
        raise ValidationError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ValidationError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_vector(h, dims, name="h"):
    """Return ``h`` as a float array of length ``dims``.

    A scalar is the on-axis shorthand ``h * e1``.
    """
    if np.ndim(h) == 0:
        out = np.zeros(dims)
        out[0] = float(h)
        return out
    out = np.asarray(h, dtype=float).reshape(-1)
    if out.shape[0] != dims:
        raise ValidationError(f"{name} has length {out.shape[0]}, expected {dims}")
    if not np.all(np.isfinite(out)):
        raise ValidationError(f"{name} must be finite")
    return out


def check_delta(delta, dims):
    bound = 1.0 / math.sqrt(dims)
    try:
        delta = float(delta)
    except (TypeError, ValueError):
        raise ValidationError(f"delta must be a real number, got {delta!r}") from None
    if not (0.0 < delta < bound):
        raise ValidationError(
            f"delta={delta} outside the admissible range (0, 1/sqrt({dims})) = (0, {bound:.6f})"
        )
    return delta


def check_point(x, dims, name="x"):
    arr = np.asarray(x)
    if arr.shape != (dims,):
        raise ValidationError(f"{name} must have shape ({dims},), got {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise ValidationError(f"{name} must be a lattice point, got {x!r}")
        arr = arr.astype(np.int64)
    return tuple(int(c) for c in arr)
