"""Design and joint variance estimators for estimating-equation estimators.

The design variance of theta_s is estimated by the sandwich

    (1/N) J^{-1} V' J^{-T}

where J estimates the Jacobian of Psi at theta_0 and V' estimates the design
variance of sqrt(N) Psi_s(theta_0).  Adding V, an estimate of the
superpopulation variance of sqrt(N) Psi_N(theta_0), to V' gives the joint
variance.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ._validation import as_2d, as_theta, check_weights
from .estfun import eval_jacobian_s, gather
from .exceptions import DomainError, SolverError, UnsupportedStrategyError
from .solve import WeightedEcdf

__all__ = [
    "VarianceReport",
    "DensityEstimate",
    "StratumSample",
    "jacobian_avg",
    "weighted_density",
    "density_jacobian",
    "vprime_ht",
    "vprime_srswor",
    "vprime_stratified",
    "vprime_stratified_srswor",
    "v_super_iid",
    "assemble",
]


def _sym(a):
    return 0.5 * (a + a.T)


@dataclass(frozen=True)
class VarianceReport:
    v_prime: np.ndarray
    jac: np.ndarray
    design_var: np.ndarray
    N: int
    v_super: Optional[np.ndarray] = None
    joint_var: Optional[np.ndarray] = None

    @property
    def design_se(self):
        return np.sqrt(np.diag(self.design_var))

    @property
    def joint_se(self):
        if self.joint_var is None:
            return None
        return np.sqrt(np.diag(self.joint_var))

    def to_dict(self):
        def lst(a):
            return None if a is None else np.asarray(a).tolist()
        return {
            "N": int(self.N),
            "v_prime": lst(self.v_prime),
            "v_super": lst(self.v_super),
            "jac": lst(self.jac),
            "design_var": lst(self.design_var),
            "joint_var": lst(self.joint_var),
        }


@dataclass(frozen=True)
class DensityEstimate:
    """Weighted Gaussian kernel density estimate."""

    support: np.ndarray
    mass: np.ndarray
    bandwidth: float

    def __call__(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        z = (t[:, None] - self.support[None, :]) / self.bandwidth
        dens = (np.exp(-0.5 * z * z) @ self.mass) / (self.bandwidth * np.sqrt(2 * np.pi))
        return dens if dens.size > 1 else float(dens[0])


def jacobian_avg(ef, pop, w, theta_hat):
    """(1/N) sum_i w_i psi_dot(Y_i; theta_hat).

    Not available for quantiles, whose psi is a step function; use
    :func:`density_jacobian` there.
    """
    if ef.jacobian_strategy == "density-based":
        raise UnsupportedStrategyError(
            f"{ef.name}: psi is not differentiable; use density_jacobian instead")
    return eval_jacobian_s(ef, pop, w, theta_hat)


def weighted_density(y, w=None, *, order=None):
    """Gaussian KDE with the weighted Silverman bandwidth.

    h = 0.9 min(sd_w, IQR_w / 1.34) m^(-1/5) with effective sample size
    m = (sum w)^2 / sum w^2.
    """
    y = np.asarray(y, dtype=float).ravel()
    w = np.ones_like(y) if w is None else check_weights(w, y.shape[0])
    ecdf = WeightedEcdf(y, w, order=order)
    if ecdf.support.size < 2:
        raise DomainError("density estimate needs at least two distinct values")
    q, ys = ecdf.mass, ecdf.support
    mu = float(q @ ys)
    sd = float(np.sqrt(q @ (ys - mu) ** 2))
    iqr = ecdf.quantile(0.75)[0] - ecdf.quantile(0.25)[0]
    pos = w[w > 0]
    m_eff = pos.sum() ** 2 / (pos ** 2).sum()
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    if not spread > 0:
        raise DomainError("sample has zero spread")
    h = 0.9 * spread * m_eff ** -0.2
    return DensityEstimate(support=ys, mass=q, bandwidth=h)


def density_jacobian(pop, w, theta_hat, *, order=None):
    """Density-based Jacobian estimate f_hat(theta_hat) for a quantile, as 1x1."""
    y = as_2d(pop)[:, 0] if isinstance(pop, np.ndarray) else gather(pop, np.arange(len(pop)))[:, 0]
    dens = weighted_density(y, w, order=order)
    return np.array([[dens(float(as_theta(theta_hat)[0]))]])


def _mask(big, N):
    if big is None:
        return np.zeros(N, dtype=bool)
    big = np.asarray(big)
    if big.dtype == bool:
        if big.shape != (N,):
            raise DomainError("big-data mask has the wrong length")
        return big
    out = np.zeros(N, dtype=bool)
    out[big.astype(int)] = True
    return out


def vprime_ht(ef, pop, m, theta_hat, big_set=None):
    """Horvitz-Thompson estimate of Var(sqrt(N) Psi_s | Y).

    (1/N) sum_{i,j in A minus B} (1/(pi_i pi_j) - 1/pi_ij) psi_i psi_j^T.
    With a nonempty ``big_set`` this is the survey-only estimator applied to
    units outside the big data.
    """
    N = len(m)
    big = _mask(big_set, N)
    idx = np.flatnonzero(m.alpha & ~big)
    d = ef.dim_theta
    if idx.size == 0:
        return np.zeros((d, d))
    psi = ef(gather(pop, idx), theta_hat)
    P = m.pi2_matrix(idx)
    pi = m.pi[idx]
    if np.any(~np.isfinite(P)) or np.any(P <= 0):
        raise DomainError("second-order inclusion probabilities must be positive")
    C = 1.0 / np.outer(pi, pi) - 1.0 / P
    return _sym(psi.T @ C @ psi) / N


def vprime_srswor(sampled_psi, n, f):
    """SRSWOR estimate ((1 - f) / f) S^2 with S^2 over A minus B.

    ``n`` is the size of the whole survey sample A, which sets both divisors
    even when big-data units have been removed from ``sampled_psi``.
    """
    psi = as_2d(sampled_psi)
    n = int(n)
    f = float(f)
    if n < 2:
        raise DomainError(f"SRSWOR variance needs n >= 2, got n={n}")
    if not 0.0 < f <= 1.0:
        raise DomainError(f"sampling fraction must lie in (0, 1], got {f}")
    if psi.shape[0] > n:
        raise DomainError("more psi values than sampled units")
    d = psi.shape[1]
    if f == 1.0 or psi.shape[0] == 0:
        return np.zeros((d, d))
    s = psi.sum(axis=0)
    S2 = (psi.T @ psi - np.outer(s, s) / n) / (n - 1)
    return _sym((1.0 - f) / f * S2)


def vprime_stratified(per_stratum):
    """sum_h F_h V'_h for independently sampled strata."""
    per_stratum = list(per_stratum)
    if not per_stratum:
        raise DomainError("no strata supplied")
    F = np.array([float(fh) for fh, _ in per_stratum])
    if np.any(F <= 0):
        raise DomainError("stratum fractions must be positive")
    if abs(F.sum() - 1.0) > 1e-9:
        raise DomainError(f"stratum fractions sum to {F.sum()!r}, not 1")
    out = None
    for fh, vh in per_stratum:
        term = fh * np.atleast_2d(np.asarray(vh, dtype=float))
        out = term if out is None else out + term
    return out


@dataclass(frozen=True)
class StratumSample:
    """Survey draws from one stratum frame.

    ``values`` holds the rows of A_h (all sampled units), ``in_big`` flags the
    rows that are also big-data units, and ``frame_size`` is the number of
    units the stratum sample was drawn from.
    """

    values: np.ndarray
    frame_size: int
    in_big: Optional[np.ndarray] = None

    @property
    def n(self):
        return self.values.shape[0]


def vprime_stratified_srswor(ef, strata: Sequence[StratumSample], theta_hat, N):
    """Stratified SRSWOR V' with integrated (or plain HT) weights.

    Strata frames need not cover the population: any remainder (units
    outside every frame, e.g. a big-data set treated as a completely
    enumerated stratum) contributes zero design variance.
    """
    d = ef.dim_theta
    parts = []
    covered = 0
    for st in strata:
        if st.frame_size <= 0:
            continue
        covered += st.frame_size
        f_h = st.n / st.frame_size
        if f_h >= 1.0:
            v_h = np.zeros((d, d))
        else:
            rows = as_2d(st.values)
            if st.in_big is not None:
                rows = rows[~np.asarray(st.in_big, dtype=bool)]
            psi = ef(rows, theta_hat) if rows.shape[0] else np.zeros((0, d))
            v_h = vprime_srswor(psi, st.n, f_h)
        parts.append((st.frame_size / N, v_h))
    rest = N - covered
    if rest < 0:
        raise DomainError("stratum frames exceed the population size")
    if rest > 0:
        parts.append((rest / N, np.zeros((d, d))))
    return vprime_stratified(parts)


def v_super_iid(ef, pop, w, theta_hat):
    """(1/N) sum_i w_i psi_i psi_i^T under an i.i.d. superpopulation."""
    N = len(pop)
    w = check_weights(w, N)
    idx = np.flatnonzero(w)
    psi = ef(gather(pop, idx), theta_hat)
    return _sym((psi * w[idx, None]).T @ psi) / N


def assemble(jac, v_prime, v_super=None, N=None):
    """Sandwich design (and joint) variance of theta_s."""
    if N is None or N <= 0:
        raise DomainError("population size N must be positive")
    jac = np.atleast_2d(np.asarray(jac, dtype=float))
    v_prime = np.atleast_2d(np.asarray(v_prime, dtype=float))
    try:
        jinv = np.linalg.inv(jac)
    except np.linalg.LinAlgError as exc:
        raise SolverError("Jacobian estimate is singular") from exc
    if not np.all(np.isfinite(jinv)):
        raise SolverError("Jacobian estimate is singular")
    design = _sym(jinv @ v_prime @ jinv.T) / N
    joint = None
    if v_super is not None:
        v_super = np.atleast_2d(np.asarray(v_super, dtype=float))
        joint = _sym(jinv @ (v_prime + v_super) @ jinv.T) / N
    return VarianceReport(v_prime=v_prime, jac=jac, design_var=design, N=int(N),
                          v_super=v_super, joint_var=joint)
