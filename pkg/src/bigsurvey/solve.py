"""Point estimators: weighted quantile, weighted Gini, WLS and damped Newton.

All solvers take full-population-length weight vectors.  Units with zero
weight are treated as unobserved, so their ``y`` entries are never read and
may hold ``nan``.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ._validation import as_2d, as_theta, check_probability, check_weights
from .exceptions import DomainError, RankDeficiencyError, SolverError

__all__ = [
    "SolveResult",
    "WeightedEcdf",
    "weighted_quantile",
    "gini",
    "gini_naive",
    "wls",
    "newton_solve",
]

CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class SolveResult:
    theta: np.ndarray
    iterations: int = 0
    converged: bool = True
    residual_norm: float = 0.0

    @property
    def value(self):
        """Scalar estimate for one-dimensional statistics."""
        if self.theta.shape != (1,):
            raise ValueError("value is only defined for scalar statistics")
        return float(self.theta[0])


class WeightedEcdf:
    """Step-function c.d.f. of a weighted sample.

    Weights are normalised internally so the function climbs to exactly one.
    Tied values have their weight pooled on a single support point.

    Parameters
    ----------
    y : array_like, shape (N,)
    w : array_like, shape (N,), optional
        Nonnegative weights; zero-weight entries are skipped without being
        read.  Defaults to equal weights.
    order : array_like of int, optional
        Precomputed ``argsort(y)`` (over all N units) to skip sorting.
    """

    def __init__(self, y, w=None, *, order=None):
        y = np.asarray(y, dtype=float).ravel()
        w = np.ones_like(y) if w is None else check_weights(w, y.shape[0])
        if order is None:
            keep = np.flatnonzero(w)
            if keep.size == 0:
                raise DomainError("no unit has positive weight")
            ys = y[keep]
            ws = w[keep]
            if not np.all(np.isfinite(ys)):
                raise DomainError("observed values must be finite")
            srt = np.argsort(ys, kind="stable")
            ys, ws = ys[srt], ws[srt]
        else:
            order = np.asarray(order)
            wo = w[order]
            pos = wo > 0
            if not np.any(pos):
                raise DomainError("no unit has positive weight")
            ys = y[order[pos]]
            ws = wo[pos]
        self.n_observed = ys.size
        total = ws.sum()
        # pool ties
        starts = np.flatnonzero(np.r_[True, ys[1:] != ys[:-1]])
        self.support = ys[starts]
        self.mass = np.add.reduceat(ws, starts) / total
        self.cum = np.cumsum(np.add.reduceat(ws, starts)) / total
        self.cum[-1] = 1.0
        # tail[j] = sum_{i >= j} mass_i * support_i ; tail[len] = 0
        self.tail = np.r_[np.cumsum((self.mass * self.support)[::-1])[::-1], 0.0]

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.support, t, side="right")
        out = np.where(idx > 0, self.cum[np.maximum(idx - 1, 0)], 0.0)
        return out if out.ndim else float(out)

    def upper_moment(self, t):
        """Return ``sum_j q_j y_j 1(y_j >= t)`` with normalised masses ``q``."""
        t = np.asarray(t, dtype=float)
        out = self.tail[np.searchsorted(self.support, t, side="left")]
        return out if out.ndim else float(out)

    @property
    def mean(self):
        return float(self.tail[0])

    def quantile(self, p):
        """Smallest support point with F(y) >= p."""
        p = check_probability(p)
        j = int(np.searchsorted(self.cum, p, side="left"))
        return float(self.support[min(j, self.support.size - 1)]), j


def weighted_quantile(y, w, p, *, order=None):
    """Weighted p-quantile ``inf{y : F_s(y) >= p}``.

    >>> weighted_quantile([1, 2, 3], [1, 1, 1], 0.5).value
    2.0
    """
    p = check_probability(p)
    ecdf = WeightedEcdf(y, w, order=order)
    theta, _ = ecdf.quantile(p)
    return SolveResult(theta=np.array([theta]))


def _gini_from_ecdf(ecdf):
    q, ys, cum = ecdf.mass, ecdf.support, ecdf.cum
    total = float(np.dot(q, ys))
    if not total > 0:
        raise DomainError("Gini index needs a positive weighted total")
    prev = np.r_[0.0, cum[:-1]]
    num = float(np.dot(q * ys, prev + cum - 1.0))
    return num / total


def gini(y, w, *, order=None):
    """Weighted Gini index in O(N log N).

    Equals ``sum_ij w_i w_j |y_i - y_j| / (2 N sum_i w_i y_i)`` once the
    weights are normalised to mean one; normalising makes the result
    invariant to rescaling ``w``.
    """
    ecdf = WeightedEcdf(y, w, order=order)
    return SolveResult(theta=np.array([_gini_from_ecdf(ecdf)]))


def gini_naive(y, w):
    """O(N^2) double-sum Gini; reference implementation for checks."""
    w = check_weights(w)
    keep = np.flatnonzero(w)
    ys = np.asarray(y, dtype=float)[keep]
    ws = w[keep] / w.mean()
    n = w.size
    num = np.sum(np.outer(ws, ws) * np.abs(ys[:, None] - ys[None, :]))
    den = 2.0 * n * np.dot(ws, ys)
    if not den > 0:
        raise DomainError("Gini index needs a positive weighted total")
    return num / den


def wls(y, X, w):
    """Weighted least squares through the normal equations.

    Solves ``sum_i w_i x_i^T (y_i - x_i theta) = 0`` by Cholesky
    factorisation of the weighted Gram matrix.
    """
    X = as_2d(X)
    y = np.asarray(y, dtype=float).ravel()
    N = X.shape[0]
    w = check_weights(w, N)
    if y.shape[0] != N:
        raise DomainError("y and X have different numbers of rows")
    keep = np.flatnonzero(w)
    Xs, ys, ws = X[keep], y[keep], w[keep]
    if not (np.all(np.isfinite(Xs)) and np.all(np.isfinite(ys))):
        raise DomainError("observed values must be finite")
    gram = (Xs * ws[:, None]).T @ Xs
    if keep.size == 0 or np.linalg.cond(gram) > CONDITION_LIMIT:
        raise RankDeficiencyError("weighted Gram matrix is rank deficient")
    rhs = (Xs * ws[:, None]).T @ ys
    theta = linalg.cho_solve(linalg.cho_factor(gram), rhs)
    resid = (Xs * (ws * (ys - Xs @ theta))[:, None]).sum(axis=0) / N
    return SolveResult(theta=theta, iterations=1, converged=True,
                       residual_norm=float(np.linalg.norm(resid)))


def newton_solve(ef, Y, w, theta0, tol=1e-10, max_iter=100):
    """Damped Newton iteration for ``Psi_s(theta) = 0``.

    The step is halved (at most 30 times) until ``||Psi_s||`` decreases.
    When no decrease is possible or ``max_iter`` runs out, the best iterate
    is returned with ``converged=False``.
    """
    from .estfun import eval_jacobian_s, eval_psi_s

    theta = as_theta(theta0).copy()
    val = eval_psi_s(ef, Y, w, theta).value
    norm = float(np.linalg.norm(val))
    if not np.isfinite(norm):
        raise DomainError("Psi_s is not finite at theta0")
    it = 0
    while norm > tol and it < max_iter:
        it += 1
        jac = eval_jacobian_s(ef, Y, w, theta)
        try:
            step = np.linalg.solve(jac, -val)
        except np.linalg.LinAlgError as exc:
            raise SolverError("Jacobian is singular") from exc
        t = 1.0
        for _ in range(31):
            cand = theta + t * step
            with np.errstate(all="ignore"):
                cval = eval_psi_s(ef, Y, w, cand).value
            cnorm = float(np.linalg.norm(cval))
            if np.isfinite(cnorm) and cnorm < norm:
                theta, val, norm = cand, cval, cnorm
                break
            t *= 0.5
        else:
            break
    return SolveResult(theta=theta, iterations=it, converged=norm <= tol,
                       residual_norm=norm)
