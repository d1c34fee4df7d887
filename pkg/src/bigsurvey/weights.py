"""Horvitz-Thompson, data-integrated and normalised weight vectors."""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ._validation import check_binary, check_weights
from .exceptions import DesignInformationError, DomainError

__all__ = [
    "WeightVector",
    "MembershipRealization",
    "horvitz_thompson",
    "integrate",
    "normalize",
    "unit_weights",
    "bigdata_weights",
]


def _frozen(a):
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class WeightVector:
    """Full-population weights; ``w[i] == 0`` marks an unobserved unit."""

    w: np.ndarray
    scheme: str
    design_unbiased: bool = False

    def __post_init__(self):
        object.__setattr__(self, "w", _frozen(check_weights(self.w)))

    def __len__(self):
        return self.w.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.w if dtype is None else self.w.astype(dtype)

    @property
    def sample(self):
        """Indices of observed units."""
        return np.flatnonzero(self.w)


@dataclass(frozen=True)
class MembershipRealization:
    """A realised survey draw with its inclusion probabilities.

    ``pi`` may be ``nan`` for units that could not be drawn (for instance
    units excluded from the frame); such units must have ``alpha == 0``.
    ``joint`` maps two index arrays to the matrix of second-order inclusion
    probabilities; when it is ``None`` the design carries no pi_ij.
    """

    alpha: np.ndarray
    pi: np.ndarray
    joint: Optional[Callable] = None

    def __post_init__(self):
        alpha = check_binary(self.alpha, name="alpha")
        pi = np.asarray(self.pi, dtype=float)
        if pi.shape != alpha.shape:
            raise DomainError("alpha and pi have different lengths")
        drawn = pi[alpha]
        if np.any(~np.isfinite(drawn)):
            raise DomainError("sampled units need a finite inclusion probability")
        known = pi[np.isfinite(pi)]
        if np.any(known <= 0) or np.any(known > 1):
            raise DomainError("inclusion probabilities must lie in (0, 1]")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "pi", _frozen(pi))

    def __len__(self):
        return self.alpha.shape[0]

    @property
    def sample(self):
        return np.flatnonzero(self.alpha)

    def pi2(self, i, j):
        """pi_ij for scalar or broadcastable index arrays."""
        i = np.asarray(i)
        j = np.asarray(j)
        if self.joint is None:
            raise DesignInformationError("design has no second-order inclusion probabilities")
        ii, jj = np.broadcast_arrays(i, j)
        out = np.asarray(self.joint(ii.ravel(), jj.ravel()), dtype=float).reshape(ii.shape)
        return out if out.ndim else float(out)

    def pi2_matrix(self, idx):
        """Matrix of pi_ij over ``idx`` x ``idx`` (diagonal holds pi_i)."""
        idx = np.asarray(idx)
        ii, jj = np.meshgrid(idx, idx, indexing="ij")
        return self.pi2(ii, jj)


def horvitz_thompson(m):
    """w_i = alpha_i / pi_i."""
    w = np.zeros(len(m))
    s = m.sample
    w[s] = 1.0 / m.pi[s]
    return WeightVector(w, scheme="HT", design_unbiased=True)


def integrate(delta, w):
    """Data-integrated weights delta_i + (1 - delta_i) w_i."""
    wv = w.w if isinstance(w, WeightVector) else check_weights(w)
    delta = check_binary(delta, wv.shape[0])
    unbiased = w.design_unbiased if isinstance(w, WeightVector) else True
    return WeightVector(np.where(delta, 1.0, wv), scheme="DI", design_unbiased=unbiased)


def normalize(w):
    """Rescale so the weights average exactly one over the population."""
    base = w if isinstance(w, WeightVector) else WeightVector(w, scheme="raw")
    mean = base.w.mean() if len(base) else 0.0
    if not mean > 0:
        raise DomainError("cannot normalise weights whose mean is not positive")
    scheme = base.scheme if base.scheme.startswith("normalized(") else f"normalized({base.scheme})"
    return WeightVector(base.w / mean, scheme=scheme,
                        design_unbiased=base.design_unbiased)


def unit_weights(N):
    return WeightVector(np.ones(N), scheme="unit", design_unbiased=True)


def bigdata_weights(delta):
    """Naive weights delta_i; generally not design unbiased."""
    delta = check_binary(delta)
    return WeightVector(delta.astype(float), scheme="bigdata", design_unbiased=False)
