"""Small input-validation helpers shared across modules."""

import numpy as np

from .exceptions import DomainError


def check_probability(p, name="p", *, open_interval=True):
    p = float(p)
    if open_interval:
        if not 0.0 < p < 1.0:
            raise DomainError(f"{name} must lie in (0, 1), got {p!r}")
    elif not 0.0 <= p <= 1.0:
        raise DomainError(f"{name} must lie in [0, 1], got {p!r}")
    return p


def check_weights(w, n=None, *, name="w"):
    """Return ``w`` as a 1-D float array of nonnegative finite values."""
    w = np.asarray(w, dtype=float)
    if w.ndim != 1:
        raise DomainError(f"{name} must be one-dimensional, got shape {w.shape}")
    if n is not None and w.shape[0] != n:
        raise DomainError(f"{name} has length {w.shape[0]}, expected {n}")
    if not np.all(np.isfinite(w)):
        raise DomainError(f"{name} contains non-finite values")
    if np.any(w < 0):
        raise DomainError(f"{name} contains negative values")
    return w


def check_binary(x, n=None, *, name="delta"):
    x = np.asarray(x)
    if x.ndim != 1:
        raise DomainError(f"{name} must be one-dimensional")
    if n is not None and x.shape[0] != n:
        raise DomainError(f"{name} has length {x.shape[0]}, expected {n}")
    if not np.all((x == 0) | (x == 1)):
        raise DomainError(f"{name} must be binary (0/1)")
    return x.astype(bool)


def as_2d(a):
    """View a 1-D array of scalars as a column; leave 2-D arrays alone."""
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        return a.reshape(1, 1)
    if a.ndim == 1:
        return a[:, None]
    return a


def as_theta(theta):
    return np.atleast_1d(np.asarray(theta, dtype=float))
