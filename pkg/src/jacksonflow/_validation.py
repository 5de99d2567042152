"""Input validation helpers shared by the public modules."""

import numbers

import numpy as np


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


def check_finite_array(a, name, ndim=None, dtype=float):
    arr = np.asarray(a, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise ValidationError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def check_probability(value, name, low_open=True, high_open=True):
    if not isinstance(value, numbers.Real):
        raise ValidationError(f"{name} must be a real number")
    lo_ok = value > 0 if low_open else value >= 0
    hi_ok = value < 1 if high_open else value <= 1
    if not (lo_ok and hi_ok):
        raise ValidationError(f"{name}={value} outside the unit interval")
    return float(value)


def check_positive_int(value, name):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 1:
        raise ValidationError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_routing_matrix(P, atol=1e-12):
    """Validate a nonnegative, row-substochastic square matrix."""
    P = check_finite_array(P, "P", ndim=2)
    if P.shape[0] != P.shape[1]:
        raise ValidationError(f"routing matrix must be square, got {P.shape}")
    if np.any(P < 0):
        raise ValidationError("routing matrix has a negative entry")
    rows = P.sum(axis=1)
    if np.any(rows > 1 + atol):
        i = int(np.argmax(rows))
        raise ValidationError(f"row {i} of routing matrix sums to {rows[i]:.6g} > 1")
    return P


def profile_values(profile, n, name="profile", points=None):
    """Turn a scalar, array or callable profile into ``n`` cell values.

    Callables are evaluated at ``points`` (cell midpoints by default).
    Arrays whose length divides ``n`` are repeated blockwise.
    """
    if points is None:
        points = (np.arange(n) + 0.5) / n
    if callable(profile):
        vals = np.asarray(profile(np.asarray(points, dtype=float)), dtype=float)
        vals = np.broadcast_to(vals, (n,)).copy()
    elif np.ndim(profile) == 0:
        vals = np.full(n, float(profile))
    else:
        vals = np.asarray(profile, dtype=float).ravel()
        if vals.size != n:
            if n % vals.size:
                raise ValidationError(
                    f"{name} has {vals.size} values, not a divisor of {n}"
                )
            vals = np.repeat(vals, n // vals.size)
    if not np.all(np.isfinite(vals)):
        raise ValidationError(f"{name} contains non-finite values")
    return vals
