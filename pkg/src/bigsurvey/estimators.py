"""scikit-learn style front end for weighted estimating-equation estimators."""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .design import infer_stratum_samples
from .estfun import (gini_function, linreg_function, mean_function, psi_mle,
                     quantile_function)
from .exceptions import DomainError
from .solve import SolveResult, gini, newton_solve, weighted_quantile, wls
from .variance import (assemble, density_jacobian, jacobian_avg, v_super_iid, vprime_ht,
                       vprime_stratified_srswor)
from .weights import WeightVector, horvitz_thompson, integrate, unit_weights

__all__ = ["EstimateReport", "WeightedEstimator", "STATISTICS"]

STATISTICS = ("mean", "median", "quantile", "gini", "linreg", "mle")
VARIANCE_MODES = ("auto", "none", "ht", "stratified")


@dataclass(frozen=True)
class EstimateReport:
    statistic: str
    theta: np.ndarray
    weight_scheme: str
    N: int
    n_observed: int
    design_var: Optional[np.ndarray] = None
    joint_var: Optional[np.ndarray] = None
    converged: bool = True

    @property
    def design_se(self):
        return None if self.design_var is None else np.sqrt(np.diag(self.design_var))

    @property
    def joint_se(self):
        return None if self.joint_var is None else np.sqrt(np.diag(self.joint_var))

    def to_dict(self):
        def lst(a):
            return None if a is None else np.asarray(a, dtype=float).tolist()
        return {
            "statistic": self.statistic,
            "theta": lst(self.theta),
            "design_se": lst(self.design_se),
            "joint_se": lst(self.joint_se),
            "design_var": lst(self.design_var),
            "joint_var": lst(self.joint_var),
            "weight_scheme": self.weight_scheme,
            "N": int(self.N),
            "n_observed": int(self.n_observed),
            "converged": bool(self.converged),
        }


class WeightedEstimator(BaseEstimator):
    """Solve a weighted estimating equation and estimate its variance.

    Parameters
    ----------
    statistic : {"mean", "median", "quantile", "gini", "linreg", "mle"}
    p : float
        Quantile level when ``statistic="quantile"``.
    score, hessian : callable, optional
        Log-likelihood score (and its derivative) for ``statistic="mle"``.
    theta0 : array_like, optional
        Starting value for the Newton solver.
    variance : {"auto", "none", "ht", "stratified"}
        ``"ht"`` uses the design's second-order inclusion probabilities,
        ``"stratified"`` recovers stratified SRSWOR frames from the
        inclusion probabilities and needs ``strata``; ``"auto"`` picks
        ``"stratified"`` when strata are given, else ``"ht"`` when a design
        is given.

    Attributes
    ----------
    theta_ : ndarray
    weights_ : WeightVector
    report_ : EstimateReport
    design_se_, joint_se_ : ndarray or None
    """

    def __init__(self, statistic="mean", p=0.5, score=None, hessian=None, theta0=None,
                 variance="auto", tol=1e-10, max_iter=100):
        self.statistic = statistic
        self.p = p
        self.score = score
        self.hessian = hessian
        self.theta0 = theta0
        self.variance = variance
        self.tol = tol
        self.max_iter = max_iter

    # -- helpers -------------------------------------------------------------

    def _rows(self, X, y):
        X = check_array(X, ensure_2d=False, ensure_all_finite=False, dtype=float)
        X = X[:, None] if X.ndim == 1 else X
        if self.statistic == "linreg":
            if y is None:
                raise DomainError("linreg needs a response y")
            y = np.asarray(y, dtype=float).ravel()
            if y.shape[0] != X.shape[0]:
                raise DomainError("X and y have different numbers of rows")
            return np.column_stack([y, X])
        return X

    def _weights(self, N, sample_weight, design, delta):
        if isinstance(sample_weight, WeightVector):
            wv = sample_weight
        elif sample_weight is not None:
            wv = WeightVector(sample_weight, scheme="custom", design_unbiased=True)
        elif design is not None:
            wv = horvitz_thompson(design)
        else:
            wv = unit_weights(N)
        if delta is not None:
            wv = integrate(delta, wv)
        if len(wv) != N:
            raise DomainError(f"weights have length {len(wv)}, data has {N} rows")
        return wv

    def _function(self, rows, w):
        s = self.statistic
        if s == "mean":
            return mean_function()
        if s in ("median", "quantile"):
            return quantile_function(0.5 if s == "median" else self.p)
        if s == "gini":
            return gini_function(rows[:, 0], w)
        if s == "linreg":
            return linreg_function(rows.shape[1] - 1)
        if self.score is None:
            raise DomainError("statistic='mle' needs a score function")
        return psi_mle(self.score, dim_theta=np.size(self.theta0) if self.theta0 is not None else 1,
                       hessian=self.hessian)

    def _solve(self, ef, rows, w):
        s = self.statistic
        if s == "mean":
            obs = np.flatnonzero(w)
            if obs.size == 0:
                raise DomainError("no unit has positive weight")
            return SolveResult(theta=np.array([w[obs] @ rows[obs, 0] / w[obs].sum()]))
        if s in ("median", "quantile"):
            return weighted_quantile(rows[:, 0], w, ef.params["p"])
        if s == "gini":
            return gini(rows[:, 0], w)
        if s == "linreg":
            return wls(rows[:, 0], rows[:, 1:], w)
        theta0 = np.zeros(ef.dim_theta) if self.theta0 is None else self.theta0
        return newton_solve(ef, rows, w, theta0, tol=self.tol, max_iter=self.max_iter)

    def _variance_mode(self, design, strata):
        mode = self.variance
        if mode not in VARIANCE_MODES:
            raise DomainError(f"variance must be one of {VARIANCE_MODES}")
        if mode == "auto":
            if strata is not None and design is not None:
                return "stratified"
            return "ht" if design is not None and design.joint is not None else "none"
        if mode != "none" and design is None:
            raise DomainError(f"variance={mode!r} needs a design")
        if mode == "stratified" and strata is None:
            raise DomainError("variance='stratified' needs stratum labels")
        return mode

    # -- API -------------------------------------------------------------------

    def fit(self, X, y=None, *, sample_weight=None, design=None, delta=None, strata=None):
        """Estimate theta from full-population-length inputs.

        Rows of units with zero weight are never read and may hold ``nan``.
        ``design`` is a :class:`~bigsurvey.weights.MembershipRealization`;
        ``delta`` flags big-data units and switches to integrated weights.
        """
        if self.statistic not in STATISTICS:
            raise DomainError(f"statistic must be one of {STATISTICS}")
        rows = self._rows(X, y)
        N = rows.shape[0]
        wv = self._weights(N, sample_weight, design, delta)
        w = wv.w
        ef = self._function(rows, w)
        res = self._solve(ef, rows, w)
        theta = res.theta

        mode = self._variance_mode(design, strata)
        design_var = joint_var = None
        if mode != "none":
            if ef.jacobian_strategy == "density-based":
                jac = density_jacobian(rows[:, 0], w, theta)
            else:
                jac = jacobian_avg(ef, rows, w, theta)
            if mode == "ht":
                big = None if delta is None else np.asarray(delta, dtype=bool)
                vp = vprime_ht(ef, rows, design, theta, big)
            else:
                samples = infer_stratum_samples(rows, strata, design.alpha, design.pi, delta)
                vp = vprime_stratified_srswor(ef, samples, theta, N)
            rep = assemble(jac, vp, v_super_iid(ef, rows, w, theta), N)
            design_var, joint_var = rep.design_var, rep.joint_var

        self.theta_ = theta
        self.result_ = res
        self.weights_ = wv
        self.n_features_in_ = rows.shape[1] - (1 if self.statistic == "linreg" else 0)
        self.report_ = EstimateReport(
            statistic=self.statistic, theta=theta, weight_scheme=wv.scheme, N=N,
            n_observed=int(np.count_nonzero(w)), design_var=design_var,
            joint_var=joint_var, converged=res.converged)
        self.design_se_ = self.report_.design_se
        self.joint_se_ = self.report_.joint_se
        return self

    def predict(self, X):
        """Linear predictor X theta (linreg only)."""
        check_is_fitted(self, "theta_")
        if self.statistic != "linreg":
            raise DomainError("predict is only defined for statistic='linreg'")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.theta_.size:
            raise DomainError(f"X has {X.shape[1]} columns, expected {self.theta_.size}")
        return X @ self.theta_
