"""Input validation helpers."""

from __future__ import annotations

import numbers

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgumentError


def check_vector(x, dim=None, *, name="x", dtype=float):
    """Return ``x`` as a finite 1-D array, optionally of length ``dim``."""
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim != 1:
        raise InvalidArgumentError(f"{name} must be 1-D, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise InvalidArgumentError(f"{name} has length {arr.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} contains non-finite entries")
    return arr


def check_square(A, *, name="A"):
    """Return ``A`` as a CSC sparse matrix or a 2-D ndarray; must be square."""
    if sp.issparse(A):
        A = sp.csc_matrix(A, dtype=float)
    else:
        A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidArgumentError(f"{name} must be square, got shape {A.shape}")
    data = A.data if sp.issparse(A) else A
    if not np.all(np.isfinite(data)):
        raise InvalidArgumentError(f"{name} contains non-finite entries")
    return A


def check_positive(value, *, name, strict=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise InvalidArgumentError(f"{name} must be a finite real number")
    if value < 0 or (strict and value == 0):
        raise InvalidArgumentError(f"{name} must be {'> 0' if strict else '>= 0'}, got {value}")
    return float(value)


def check_theta(theta):
    if not isinstance(theta, numbers.Real) or not 0 < theta <= 1:
        raise InvalidArgumentError(f"theta must lie in (0, 1], got {theta}")
    return float(theta)


def check_int(value, *, name, minimum):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < minimum:
        raise InvalidArgumentError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)
