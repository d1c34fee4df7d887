"""Mixture superpopulation built from binned income frequencies.

Each stratum c.d.f. is a monotone piecewise-cubic Hermite interpolant through
cumulative bracket frequencies.  Tangents start from the three-point
(Fritsch-Carlson) estimate and pass through the Hyman filter
``0 <= m_k <= 3 min(secant_{k-1}, secant_k)``, which guarantees monotonicity.
The last bracket bound is free and is solved so the stratum mean matches its
target.
"""

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import integrate, optimize

from .design import BigDataMechanism, StratifiedFrame, bigdata_select, neyman_allocate
from .estfun import gini_function, psi_quantile
from .exceptions import ConfigError, ConstructionError, DomainError, NumericError

__all__ = [
    "StratumCdfSpec",
    "MonotoneCdf",
    "PointMass",
    "ParametricModel",
    "SuperpopModel",
    "TrueFunctionals",
    "ReferenceDesign",
    "ReferenceVariance",
    "hyman_tangents",
    "fit_stratum_cdf",
    "mixture",
    "true_functionals",
    "reference_vprime",
    "load_superpop",
    "superpop_from_dict",
]

# 4-point Gauss-Legendre rule on [0, 1]; exact for polynomials of degree <= 7
_GL_X, _GL_W = np.polynomial.legendre.leggauss(4)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


def hyman_tangents(x, y):
    """Three-point tangents clipped by the Hyman monotonicity filter."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    h = np.diff(x)
    if np.any(h <= 0):
        raise ConstructionError("knots must be strictly increasing")
    delta = np.diff(y) / h
    if np.any(delta < 0):
        raise ConstructionError("knot values must be nondecreasing")
    m = np.empty_like(y)
    if y.size == 2:
        m[:] = delta[0]
        return m
    m[1:-1] = (h[1:] * delta[:-1] + h[:-1] * delta[1:]) / (h[:-1] + h[1:])
    m[0] = delta[0]
    m[-1] = delta[-1]
    cap = np.empty_like(y)
    cap[0] = 3.0 * delta[0]
    cap[-1] = 3.0 * delta[-1]
    cap[1:-1] = 3.0 * np.minimum(delta[:-1], delta[1:])
    return np.clip(m, 0.0, cap)


class MonotoneCdf:
    """Piecewise-cubic Hermite c.d.f. on [x_0, x_m]; 0 below, 1 above."""

    def __init__(self, x, y, slopes=None):
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float)
        if self.x.size < 2 or self.x.shape != self.y.shape:
            raise ConstructionError("need at least two matching knots")
        self.m = hyman_tangents(self.x, self.y) if slopes is None else np.asarray(slopes, dtype=float)
        self.h = np.diff(self.x)
        d = np.diff(self.y) / self.h
        cap_l = 3.0 * d + 1e-12 * (1 + np.abs(d))
        if np.any(self.m < 0) or np.any(self.m[:-1] > cap_l) or np.any(self.m[1:] > cap_l):
            raise ConstructionError("tangents violate the monotonicity filter")

    @property
    def lower(self):
        return float(self.x[0])

    @property
    def upper(self):
        return float(self.x[-1])

    @property
    def breakpoints(self):
        return self.x

    def _segment(self, t):
        k = np.clip(np.searchsorted(self.x, t, side="right") - 1, 0, self.x.size - 2)
        s = (t - self.x[k]) / self.h[k]
        return k, s

    def _eval(self, k, s):
        s2, s3 = s * s, s * s * s
        h00 = 2 * s3 - 3 * s2 + 1
        h10 = s3 - 2 * s2 + s
        h01 = -2 * s3 + 3 * s2
        h11 = s3 - s2
        hk = self.h[k]
        return (h00 * self.y[k] + h10 * hk * self.m[k]
                + h01 * self.y[k + 1] + h11 * hk * self.m[k + 1])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        k, s = self._segment(t)
        out = np.where(t <= self.x[0], self.y[0],
                       np.where(t >= self.x[-1], self.y[-1], self._eval(k, s)))
        out = np.where(t < self.x[0], 0.0, np.where(t >= self.x[-1], 1.0, out))
        return out if out.ndim else float(out)

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        k, s = self._segment(t)
        s2 = s * s
        d = ((6 * s2 - 6 * s) * self.y[k] + (3 * s2 - 4 * s + 1) * self.h[k] * self.m[k]
             + (-6 * s2 + 6 * s) * self.y[k + 1] + (3 * s2 - 2 * s) * self.h[k] * self.m[k + 1])
        out = np.where((t < self.x[0]) | (t > self.x[-1]), 0.0, d / self.h[k])
        return out if out.ndim else float(out)

    def integral(self):
        """Exact integral of F over [x_0, x_m]."""
        return float(np.sum(self.h * (self.y[:-1] + self.y[1:]) / 2
                            + self.h ** 2 * (self.m[:-1] - self.m[1:]) / 12))

    @property
    def mean(self):
        """x_0 + integral of (1 - F) over the support."""
        return self.upper - self.integral()

    def ppf(self, u, iters=60):
        """Smallest t with F(t) >= u, by bisection inside the knot segment."""
        u = np.asarray(u, dtype=float)
        flat = u.ravel()
        k = np.clip(np.searchsorted(self.y, flat, side="left") - 1, 0, self.x.size - 2)
        lo = np.zeros_like(flat)
        hi = np.ones_like(flat)
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            below = self._eval(k, mid) < flat
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        out = (self.x[k] + hi * self.h[k]).reshape(u.shape)
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class PointMass:
    """Degenerate distribution at ``value``."""

    value: float

    @property
    def lower(self):
        return float(self.value)

    upper = lower

    @property
    def breakpoints(self):
        return np.array([self.value], dtype=float)

    @property
    def mean(self):
        return float(self.value)

    def __call__(self, t):
        out = (np.asarray(t, dtype=float) >= self.value).astype(float)
        return out if out.ndim else float(out)

    def pdf(self, t):
        out = np.where(np.asarray(t, dtype=float) == self.value, np.inf, 0.0)
        return out if out.ndim else float(out)

    def ppf(self, u):
        out = np.full(np.shape(u), float(self.value))
        return out if out.ndim else float(out)


class ParametricModel:
    """Wraps a frozen ``scipy.stats`` continuous distribution."""

    def __init__(self, dist):
        self.dist = dist

    @property
    def lower(self):
        return float(self.dist.support()[0])

    @property
    def upper(self):
        return float(self.dist.support()[1])

    @property
    def mean(self):
        return float(self.dist.mean())

    def __call__(self, t):
        return self.dist.cdf(t)

    def pdf(self, t):
        return self.dist.pdf(t)

    def ppf(self, u):
        return self.dist.ppf(u)


@dataclass(frozen=True)
class StratumCdfSpec:
    """Binned income data for one stratum.

    ``brackets`` holds the m - 1 given weekly upper bounds; the last bound is
    solved.  ``frequencies`` has m percentages summing to 100.
    """

    brackets: np.ndarray
    frequencies: np.ndarray
    median: float
    mean: float
    population_median: float
    name: str = ""

    def __post_init__(self):
        b = np.asarray(self.brackets, dtype=float)
        r = np.asarray(self.frequencies, dtype=float)
        if b.ndim != 1 or r.ndim != 1 or r.size != b.size + 1:
            raise ConfigError("need one more frequency than given bracket bounds")
        if b.size and (b[0] <= 0 or np.any(np.diff(b) <= 0)):
            raise ConfigError("bracket bounds must be positive and strictly increasing")
        if np.any(r < 0) or abs(r.sum() - 100.0) > 1e-9:
            raise ConfigError(f"frequencies must be nonnegative and sum to 100, got {r.sum()!r}")
        if not (self.median > 0 and self.mean > 0 and self.population_median > 0):
            raise ConfigError("medians and mean must be positive")
        object.__setattr__(self, "brackets", b)
        object.__setattr__(self, "frequencies", r)

    @property
    def scale(self):
        return 52.0 * self.median / self.population_median


def _cdf_with_last(knots, cum, last):
    return MonotoneCdf(np.r_[0.0, knots, last], np.r_[0.0, cum])


def fit_stratum_cdf(spec: StratumCdfSpec):
    """Monotone c.d.f. through the scaled knots with the last bound solved.

    The last bound X_m is found in (X_{m-1}, 1e4 X_{m-1}] so that the exact
    mean of the interpolant equals ``spec.mean``.
    """
    knots = spec.scale * spec.brackets
    cum = np.cumsum(spec.frequencies) / 100.0
    cum[-1] = 1.0
    prev = knots[-1] if knots.size else spec.mean * 1e-3

    def gap(last):
        return _cdf_with_last(knots, cum, last).mean - spec.mean

    lo, hi = prev * (1 + 1e-12), 1e4 * prev
    g_lo, g_hi = gap(lo), gap(hi)
    if g_lo > 0 or g_hi < 0:
        raise ConstructionError(
            f"stratum {spec.name!r}: no last bracket bound gives mean {spec.mean}")
    last = lo if g_lo == 0 else optimize.brentq(gap, lo, hi, xtol=1e-12 * prev, rtol=1e-15)
    cdf = _cdf_with_last(knots, cum, last)
    # the interpolated median should sit in the bracket holding the stated median
    j = int(np.searchsorted(cdf.x, spec.median, side="left"))
    med = float(cdf.ppf(0.5))
    if j == 0 or j >= cdf.x.size or not cdf.x[j - 1] <= med <= cdf.x[j]:
        warnings.warn(f"stratum {spec.name!r}: interpolated median {med:.6g} lies outside "
                      f"the bracket containing {spec.median:.6g}", stacklevel=2)
    return cdf


@dataclass(frozen=True)
class SuperpopModel:
    """Finite mixture F = sum_h p_h F_h."""

    p: np.ndarray
    components: tuple
    names: tuple = ()

    @property
    def H(self):
        return len(self.components)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = sum(ph * c(t) for ph, c in zip(self.p, self.components))
        return out if np.ndim(out) else float(out)

    cdf = __call__

    def pdf(self, t):
        out = sum(ph * c.pdf(t) for ph, c in zip(self.p, self.components))
        return out if np.ndim(out) else float(out)

    @property
    def mean(self):
        return float(sum(ph * c.mean for ph, c in zip(self.p, self.components)))

    @property
    def lower(self):
        return min(c.lower for c in self.components)

    @property
    def upper(self):
        return max(c.upper for c in self.components)

    def sample(self, n, rng):
        """Draw ``n`` units; returns (values, stratum labels 0..H-1)."""
        strata = rng.choice(self.H, size=int(n), p=self.p)
        u = rng.random(int(n))
        y = np.empty(int(n))
        for h, comp in enumerate(self.components):
            sel = strata == h
            y[sel] = comp.ppf(u[sel])
        return y, strata


def mixture(p, cdfs, names=()):
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size != len(cdfs) or p.size == 0:
        raise DomainError("need one proportion per component")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise DomainError(f"proportions must be nonnegative and sum to 1, got {p.sum()!r}")
    return SuperpopModel(p=p, components=tuple(cdfs), names=tuple(names))


@dataclass(frozen=True)
class TrueFunctionals:
    median: float
    gini: float
    mean: float
    reference_vprime: Optional[dict] = None

    def value(self, statistic):
        return {"median": self.median, "gini": self.gini, "mean": self.mean}[statistic]


def _is_piecewise(model):
    comps = model.components if isinstance(model, SuperpopModel) else (model,)
    return all(isinstance(c, (MonotoneCdf, PointMass)) for c in comps)


def _breakpoints(model):
    comps = model.components if isinstance(model, SuperpopModel) else (model,)
    return np.unique(np.concatenate([c.breakpoints for c in comps]))


def _median(model, tol):
    lo, hi = model.lower, model.upper
    if not (np.isfinite(lo) and np.isfinite(hi)):
        lo, hi = float(model.ppf(0.25)), float(model.ppf(0.75))
        while model(lo) >= 0.5:
            lo -= 2 * (hi - lo) + 1
        while model(hi) < 0.5:
            hi += 2 * (hi - lo) + 1
    if model(lo) >= 0.5:
        return lo
    while hi - lo > tol * max(abs(hi), abs(lo), 1e-300):
        mid = 0.5 * (lo + hi)
        if model(mid) >= 0.5:
            hi = mid
        else:
            lo = mid
        if mid in (lo, hi) and hi - lo <= np.spacing(hi):
            break
    return hi


def true_functionals(model, quad_tol=1e-10):
    """Median, mean and Gini of a model.

    For piecewise-cubic and point-mass mixtures F(1 - F) is a piecewise
    polynomial of degree six, so composite Gauss-Legendre on the union of
    knots is exact.  Other models use adaptive quadrature.
    """
    median = _median(model, quad_tol)
    if _is_piecewise(model):
        bp = _breakpoints(model)
        mean = float(model.mean)
        if bp.size < 2:
            return TrueFunctionals(median=median, gini=0.0, mean=mean)
        a, w = bp[:-1], np.diff(bp)
        t = a[:, None] + w[:, None] * _GL_X[None, :]
        F = np.asarray(model(t))
        area = float(np.sum(w[:, None] * _GL_W[None, :] * F * (1 - F)))
    else:
        lo, hi = model.lower, model.upper
        mean = float(model.mean)
        area, err = integrate.quad(lambda s: model(s) * (1 - model(s)), lo, hi,
                                   epsabs=quad_tol, limit=500)
        if not err <= max(1e3 * quad_tol, 1e-8 * abs(area)):
            raise NumericError(f"quadrature did not converge (error estimate {err})")
    if not mean > 0:
        raise NumericError("Gini index needs a positive mean")
    return TrueFunctionals(median=float(median), gini=area / mean, mean=mean)


# -- reference asymptotic variances ---------------------------------------------

@dataclass(frozen=True)
class ReferenceDesign:
    """Population-level design behind a reference V'.

    ``kind`` is ``"srswor"`` (one stratum), ``"survey"`` (stratified,
    survey-only), ``"integrated"`` (stratified over U with big-data
    integration) or ``"strat_integrated"`` (stratified over U minus B).
    """

    kind: str = "integrated"
    fraction: float = 1e-2
    mechanism: BigDataMechanism = field(default_factory=BigDataMechanism)

    def __post_init__(self):
        if self.kind not in ("srswor", "survey", "integrated", "strat_integrated"):
            raise DomainError(f"unknown reference design {self.kind!r}")
        if not 0.0 < self.fraction <= 1.0:
            raise DomainError("fraction must lie in (0, 1]")


@dataclass(frozen=True)
class ReferenceVariance:
    v_prime: float
    v_super: float
    jac: float
    M: int

    @property
    def design_asymptotic(self):
        """Limit of N Var(theta_s | Y)."""
        return self.v_prime / self.jac ** 2

    @property
    def joint_asymptotic(self):
        """Limit of N Var(theta_s - theta_0)."""
        return (self.v_prime + self.v_super) / self.jac ** 2

    def to_dict(self):
        return {"v_prime": self.v_prime, "v_super": self.v_super, "jac": self.jac,
                "M": self.M, "design_asymptotic": self.design_asymptotic,
                "joint_asymptotic": self.joint_asymptotic}


def _stratum_term(z, size, n, N):
    if size < 2 or n >= size:
        return 0.0
    return (size / N) * (1.0 - n / size) / (n / size) * float(np.var(z, ddof=1))


def reference_vprime(model, statistic, design, M, rng, theta=None):
    """Reference V', V and Jacobian from ``M`` superpopulation draws.

    V' is the population-level value of the stratified SRSWOR design
    variance of sqrt(N) Psi_s at the true parameter, with Neyman
    allocation of ``fraction * M`` units.  The Jacobian is exact: the model
    density at the median, minus the mean for the Gini index, -1 for the mean.
    """
    M = int(M)
    if statistic not in ("mean", "median", "gini"):
        raise DomainError(f"unknown statistic {statistic!r}")
    if M < 10_000:
        raise DomainError("reference_vprime needs M >= 1e4 draws")
    truth = true_functionals(model)
    theta = truth.value(statistic) if theta is None else float(theta)
    y, strata = model.sample(M, rng) if isinstance(model, SuperpopModel) else \
        (np.asarray(model.ppf(rng.random(M))), np.zeros(M, dtype=int))
    if statistic == "mean":
        psi = y - theta
        jac = -1.0
    elif statistic == "median":
        psi = psi_quantile(y, theta, 0.5)
        with np.errstate(all="ignore"):
            jac = float(model.pdf(theta))
    elif statistic == "gini":
        psi = gini_function(y, np.ones(M))(y, theta)[:, 0]
        jac = -truth.mean
    else:
        raise DomainError(f"unknown statistic {statistic!r}")
    v_super = float(np.mean(psi * psi))
    n_total = max(int(round(design.fraction * M)), 1)

    if design.kind == "srswor":
        v_prime = _stratum_term(psi, M, n_total, M)
        return ReferenceVariance(v_prime=v_prime, v_super=v_super, jac=jac, M=M)

    delta = np.zeros(M, dtype=bool)
    if design.kind in ("integrated", "strat_integrated"):
        delta = bigdata_select(y, design.mechanism, rng).astype(bool)
    if design.kind == "strat_integrated":
        keep = np.flatnonzero(~delta)
        frame = StratifiedFrame.from_labels(strata[keep])
        members = [keep[m] for m in frame.members]
        plan = neyman_allocate(frame, y[keep], n_total)
        z = psi
    else:
        frame = StratifiedFrame.from_labels(strata)
        members = list(frame.members)
        plan = neyman_allocate(frame, y, n_total)
        z = np.where(delta, 0.0, psi)
    v_prime = sum(_stratum_term(z[m], m.size, n_h, M) for m, n_h in zip(members, plan.n))
    return ReferenceVariance(v_prime=float(v_prime), v_super=v_super, jac=jac, M=M)


# -- configuration files -----------------------------------------------------

def superpop_from_dict(cfg):
    """Build a model from the JSON schema documented in the README."""
    try:
        eta = float(cfg["population_median"])
        specs = []
        for k, st in enumerate(cfg["strata"]):
            specs.append(StratumCdfSpec(
                brackets=st["brackets"], frequencies=st["frequencies"],
                median=float(st["median"]), mean=float(st["mean"]),
                population_median=eta, name=str(st.get("name", k))))
        p = [float(st["proportion"]) for st in cfg["strata"]]
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid superpopulation config: {exc}") from exc
    cdfs = [fit_stratum_cdf(s) for s in specs]
    try:
        return mixture(p, cdfs, names=[s.name for s in specs])
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc


def load_superpop(path):
    """Load a superpopulation JSON file; bundled names resolve to package data."""
    path = Path(path)
    if not path.exists():
        bundled = Path(__file__).parent / "data" / path.name
        if bundled.exists():
            path = bundled
    with open(path) as fh:
        cfg = json.load(fh)
    return superpop_from_dict(cfg)
