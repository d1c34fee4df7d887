"""Estimating functions psi(y; theta) and the weighted equations built on them.

An :class:`EstimatingFunction` is vectorised over observations: ``psi`` maps
an ``(n, k)`` block of observations and a parameter of length ``d`` to an
``(n, d)`` block.  The sample estimating equation is

    Psi_s(theta) = (1/N) sum_i w_i psi(Y_i; theta)

with N the population size.  Unit weights give the population equation.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ._validation import as_2d, as_theta, check_probability, check_weights
from .exceptions import DomainError
from .solve import WeightedEcdf

JACOBIAN_STRATEGIES = ("analytic-average", "density-based", "custom")
SOLVE_STRATEGIES = ("closed-form", "sort-based", "newton")


@dataclass(frozen=True)
class Observation:
    """One population unit: its study vector, stratum and big-data flag."""

    y: np.ndarray
    stratum: int = 0
    delta: int = 0

    def __post_init__(self):
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        if not np.all(np.isfinite(y)):
            raise DomainError("observation values must be finite")
        if self.delta not in (0, 1):
            raise DomainError("delta must be 0 or 1")
        object.__setattr__(self, "y", y)


@dataclass(frozen=True)
class EstimatingFunction:
    name: str
    dim_theta: int
    psi: Callable
    jacobian: Optional[Callable] = None
    jacobian_strategy: str = "analytic-average"
    solve_strategy: str = "newton"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim_theta < 1:
            raise DomainError("dim_theta must be positive")
        if self.jacobian_strategy not in JACOBIAN_STRATEGIES:
            raise DomainError(f"unknown jacobian strategy {self.jacobian_strategy!r}")
        if self.solve_strategy not in SOLVE_STRATEGIES:
            raise DomainError(f"unknown solve strategy {self.solve_strategy!r}")

    def __call__(self, Y, theta):
        """psi evaluated row-wise; returns shape (n, dim_theta)."""
        out = np.asarray(self.psi(as_2d(Y), as_theta(theta)), dtype=float)
        return out.reshape(out.shape[0], self.dim_theta)

    def evaluate(self, y, theta):
        """psi for a single observation, as a vector of length dim_theta."""
        return self(np.atleast_1d(np.asarray(y, dtype=float))[None, :], theta)[0]

    def jacobian_rows(self, Y, theta):
        """Per-observation Jacobians, shape (n, d, d)."""
        Y = as_2d(Y)
        theta = as_theta(theta)
        d = self.dim_theta
        if self.jacobian is not None:
            out = np.asarray(self.jacobian(Y, theta), dtype=float)
            return out.reshape(Y.shape[0], d, d)
        out = np.empty((Y.shape[0], d, d))
        for k in range(d):
            h = 1e-6 * (1.0 + abs(theta[k]))
            e = np.zeros(d)
            e[k] = h
            out[:, :, k] = (self(Y, theta + e) - self(Y, theta - e)) / (2 * h)
        return out


@dataclass(frozen=True)
class EstimatingEquationValue:
    value: np.ndarray
    n_terms: int


# -- scalar psi functions ---------------------------------------------------

def psi_mean(y, theta):
    return y - theta


def psi_quantile(y, theta, p):
    """(1 - p) 1(y < theta) - p 1(y > theta); zero at a tie."""
    p = check_probability(p)
    return (1.0 - p) * (np.asarray(y) < theta) - p * (np.asarray(y) > theta)


def psi_gini_hat(y, theta, fhat, moment_xF=None):
    """Plug-in Gini estimating function with F replaced by ``fhat``.

    ``moment_xF`` is ``sum_j q_j F(y_j) y_j`` over the sample behind
    ``fhat``; it is recomputed when omitted.
    """
    if moment_xF is None:
        moment_xF = gini_moment_xF(fhat)
    y = np.asarray(y, dtype=float)
    return (2.0 * (fhat.upper_moment(y) - moment_xF)
            + (2.0 * fhat(y) - 1.0) * y - theta * y)


def gini_moment_xF(fhat):
    return float(np.dot(fhat.mass * fhat.support, fhat.cum))


def psi_linreg(y, x, theta):
    """x^T (y - x theta) for one observation."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    theta = as_theta(theta)
    if x.shape != theta.shape:
        raise DomainError(f"x has length {x.size} but theta has length {theta.size}")
    return x * (float(y) - float(x @ theta))


# -- EstimatingFunction constructors ----------------------------------------

def mean_function():
    return EstimatingFunction(
        name="mean", dim_theta=1,
        psi=lambda Y, t: Y[:, :1] - t[0],
        jacobian=lambda Y, t: -np.ones((Y.shape[0], 1, 1)),
        solve_strategy="closed-form",
    )


def quantile_function(p=0.5):
    p = check_probability(p)
    return EstimatingFunction(
        name="median" if p == 0.5 else "quantile", dim_theta=1,
        psi=lambda Y, t: psi_quantile(Y[:, :1], t[0], p),
        jacobian=None,
        jacobian_strategy="density-based",
        solve_strategy="sort-based",
        params={"p": p},
    )


def gini_function(y, w, *, order=None):
    """Gini estimating function with ``F`` estimated from the weighted sample.

    Moments are precomputed once, so evaluating psi at many points costs a
    binary search each.
    """
    fhat = WeightedEcdf(np.asarray(y, dtype=float).ravel(), w, order=order)
    mxf = gini_moment_xF(fhat)
    return EstimatingFunction(
        name="gini", dim_theta=1,
        psi=lambda Y, t: psi_gini_hat(Y[:, 0], t[0], fhat, mxf)[:, None],
        jacobian=lambda Y, t: -Y[:, :1].reshape(-1, 1, 1),
        solve_strategy="sort-based",
        params={"fhat": fhat, "moment_xF": mxf},
    )


def linreg_function(n_regressors):
    """Rows are ``(y, x_1, ..., x_k)``; theta has length k."""
    k = int(n_regressors)

    def psi(Y, t):
        y, X = Y[:, 0], Y[:, 1:1 + k]
        return X * (y - X @ t)[:, None]

    def jac(Y, t):
        X = Y[:, 1:1 + k]
        return -X[:, :, None] * X[:, None, :]

    return EstimatingFunction(name="linreg", dim_theta=k, psi=psi, jacobian=jac,
                              solve_strategy="closed-form")


def psi_mle(score, dim_theta=1, hessian=None, *, squeeze=True):
    """Wrap a log-likelihood score as an estimating function.

    ``score(y, theta)`` must be vectorised over observations.  With
    ``squeeze`` (the default) a single-column ``y`` is passed as a 1-D array,
    so scalar formulas such as ``y / t - (1 - y) / (1 - t)`` work directly;
    ``theta`` is passed as a scalar when ``dim_theta == 1``.  Without a
    ``hessian`` the Jacobian is taken by central differences of the score.
    """
    d = int(dim_theta)

    def _args(Y, t):
        y = Y[:, 0] if (squeeze and Y.shape[1] == 1) else Y
        return y, (t[0] if d == 1 else t)

    def psi(Y, t):
        return np.asarray(score(*_args(Y, t)), dtype=float).reshape(Y.shape[0], d)

    jac = None
    if hessian is not None:
        def jac(Y, t):
            return np.asarray(hessian(*_args(Y, t)), dtype=float).reshape(Y.shape[0], d, d)

    return EstimatingFunction(name="mle", dim_theta=d, psi=psi, jacobian=jac,
                              jacobian_strategy="analytic-average",
                              solve_strategy="newton")


# -- weighted estimating equations ------------------------------------------

def gather(pop, idx):
    """Rows of ``pop`` at ``idx`` as an (n, k) array.

    ``pop`` may be an array or a sequence of :class:`Observation`; only the
    requested entries are touched.
    """
    if isinstance(pop, np.ndarray):
        return as_2d(pop)[idx]
    if len(idx) == 0:
        return np.empty((0, 1))
    return np.vstack([np.atleast_1d(pop[i].y) for i in idx])


def _observed(pop, w):
    N = len(pop)
    w = check_weights(w, N)
    idx = np.flatnonzero(w)
    return N, w, idx, gather(pop, idx)


def eval_psi_s(ef, pop, w, theta):
    """Psi_s(theta) = (1/N) sum_i w_i psi(Y_i; theta) over nonzero weights."""
    N, w, idx, Ys = _observed(pop, w)
    if idx.size == 0:
        return EstimatingEquationValue(value=np.zeros(ef.dim_theta), n_terms=0)
    vals = ef(Ys, theta)
    return EstimatingEquationValue(value=(w[idx] @ vals) / N, n_terms=int(idx.size))


def eval_jacobian_s(ef, pop, w, theta):
    """(1/N) sum_i w_i psi_dot(Y_i; theta)."""
    N, w, idx, Ys = _observed(pop, w)
    J = ef.jacobian_rows(Ys, theta)
    return np.tensordot(w[idx], J, axes=(0, 0)) / N


def population_psi(ef, pop, theta):
    """Psi_N(theta), the unweighted population average."""
    return eval_psi_s(ef, pop, np.ones(len(pop)), theta).value


def observations(values, strata=None, delta=None) -> Sequence[Observation]:
    """Build a list of :class:`Observation` from parallel arrays."""
    values = as_2d(values)
    n = values.shape[0]
    strata = np.zeros(n, dtype=int) if strata is None else np.asarray(strata)
    delta = np.zeros(n, dtype=int) if delta is None else np.asarray(delta)
    return [Observation(values[i], int(strata[i]), int(delta[i])) for i in range(n)]
