"""Sampling mechanisms and survey-design utilities.

Every randomised function takes an explicit ``numpy.random.Generator``.
:func:`stream` derives independent counter-based (Philox) generators from a
master seed, a replicate id and a purpose tag, so parallel work units never
share random numbers.
"""

import zlib
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy import optimize

from ._validation import as_2d, check_binary
from .exceptions import DomainError
from .variance import StratumSample
from .weights import MembershipRealization

__all__ = [
    "stream",
    "srswor",
    "srswor_membership",
    "StratifiedFrame",
    "AllocationPlan",
    "StratifiedDraw",
    "BigDataMechanism",
    "neyman_allocate",
    "stratified_srswor",
    "bigdata_select",
    "single_draw_probabilities",
    "enumerated_stratum_ratio",
    "allocate_optimal",
    "infer_stratum_samples",
]


def stream(seed, replicate=0, tag=""):
    """Independent generator keyed by (seed, replicate, tag)."""
    key = [int(seed), int(replicate), zlib.crc32(tag.encode("utf-8"))]
    if min(key) < 0:
        raise DomainError("seed and replicate must be nonnegative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


# -- simple random sampling -------------------------------------------------

def srswor(N, n, rng):
    """Sorted indices of a size-n simple random sample from range(N)."""
    N, n = int(N), int(n)
    if not 0 <= n <= N:
        raise DomainError(f"cannot draw n={n} units from N={N}")
    if n == N:
        return np.arange(N)
    return np.sort(rng.choice(N, size=n, replace=False))


def srswor_membership(N, idx):
    """MembershipRealization of an SRSWOR draw ``idx`` from range(N)."""
    N = int(N)
    n = len(idx)
    alpha = np.zeros(N, dtype=bool)
    alpha[np.asarray(idx, dtype=int)] = True
    p1 = n / N
    p2 = n * (n - 1) / (N * (N - 1)) if N > 1 else p1

    def joint(i, j):
        return np.where(np.asarray(i) == np.asarray(j), p1, p2)

    return MembershipRealization(alpha, np.full(N, p1), joint)


# -- stratification -----------------------------------------------------------

@dataclass(frozen=True)
class StratifiedFrame:
    """Partition of range(N) into strata."""

    labels: np.ndarray
    members: tuple

    @classmethod
    def from_labels(cls, strata):
        strata = np.asarray(strata)
        if strata.ndim != 1:
            raise DomainError("stratum labels must be one-dimensional")
        labels, inv = np.unique(strata, return_inverse=True)
        order = np.argsort(inv, kind="stable")
        bounds = np.r_[0, np.cumsum(np.bincount(inv, minlength=labels.size))]
        members = tuple(order[bounds[h]:bounds[h + 1]] for h in range(labels.size))
        return cls(labels=labels, members=members)

    @property
    def H(self):
        return len(self.members)

    @property
    def sizes(self):
        return np.array([m.size for m in self.members])

    @property
    def N(self):
        return int(self.sizes.sum())

    @property
    def fractions(self):
        return self.sizes / self.N


@dataclass(frozen=True)
class AllocationPlan:
    """Per-stratum sample sizes (when known) and sampling fractions."""

    f: np.ndarray
    n: Optional[np.ndarray] = None
    sizes: Optional[np.ndarray] = None
    variance: Optional[float] = None

    def __post_init__(self):
        f = np.asarray(self.f, dtype=float)
        if np.any(f < 0) or np.any(f > 1):
            raise DomainError("sampling fractions must lie in [0, 1]")
        object.__setattr__(self, "f", f)
        if self.n is not None:
            n = np.asarray(self.n)
            if np.any(n < 0) or np.any(n != np.round(n)):
                raise DomainError("sample sizes must be nonnegative integers")
            n = n.astype(int)
            if self.sizes is not None and np.any(n > np.asarray(self.sizes)):
                raise DomainError("sample size exceeds stratum size")
            object.__setattr__(self, "n", n)

    @classmethod
    def from_sizes(cls, n, sizes):
        n = np.asarray(n, dtype=int)
        sizes = np.asarray(sizes, dtype=int)
        return cls(f=n / sizes, n=n, sizes=sizes)

    @property
    def total_fraction(self):
        if self.n is not None and self.sizes is not None:
            return float(self.n.sum() / self.sizes.sum())
        return None

    def to_dict(self):
        return {
            "f": self.f.tolist(),
            "n": None if self.n is None else self.n.tolist(),
            "sizes": None if self.sizes is None else np.asarray(self.sizes).tolist(),
            "variance": self.variance,
        }


def _largest_remainder(x, total):
    base = np.floor(x).astype(int)
    short = int(total - base.sum())
    if short > 0:
        # ties resolved by stratum order
        order = np.argsort(-(x - base), kind="stable")
        base[order[:short]] += 1
    return base


def _bounded_allocation(score, total, lo, hi):
    """Integer allocation proportional to ``score`` within [lo, hi] summing to total.

    Continuous part: x_h = clip(lam * score_h, lo_h, hi_h) with lam chosen so
    that sum x_h = total (water filling).  Zero scores get a vanishing share
    so a stratum without spread only rises above its floor when every other
    stratum is full.  Integer part: largest remainder.
    """
    score = np.asarray(score, dtype=float)
    pos = score[score > 0]
    tiny = (pos.min() if pos.size else 1.0) * 1e-9
    score = np.where(score > 0, score, tiny)

    def excess(lam):
        return np.clip(lam * score, lo, hi).sum() - total

    # excess is piecewise linear in lam with kinks at lo/score and hi/score
    knots = np.unique(np.r_[0.0, lo / score, hi / score])
    ex = np.array([excess(k) for k in knots])
    if ex[0] >= 0:
        x = lo.astype(float)
    elif ex[-1] <= 0:
        x = hi.astype(float)
    else:
        j = int(np.argmax(ex >= 0))
        a, b = knots[j - 1], knots[j]
        lam = a + (b - a) * (-ex[j - 1]) / (ex[j] - ex[j - 1])
        x = np.clip(lam * score, lo, hi)
        # absorb float error so the integer step sees the exact total
        x = x + (total - x.sum()) * (x > lo) * (x < hi) / max(1, np.count_nonzero((x > lo) & (x < hi)))
    return _largest_remainder(x, total)


def neyman_allocate(frame, y, n_total):
    """n_h proportional to N_h S_h, with 2 <= n_h <= N_h and sum n_h = n_total.

    ``S_h`` is the standard deviation (divisor N_h - 1) of ``y`` within
    stratum h of the realised population.
    """
    y = np.asarray(y, dtype=float).ravel()
    n_total = int(n_total)
    Nh = frame.sizes
    if np.any(Nh < 2):
        raise DomainError("every stratum needs at least two units")
    if not 2 * frame.H <= n_total <= Nh.sum():
        raise DomainError(f"n_total={n_total} infeasible for {frame.H} strata of sizes {Nh.tolist()}")
    S = np.array([y[m].std(ddof=1) for m in frame.members])
    n = _bounded_allocation(Nh * S, n_total, np.full(frame.H, 2.0), Nh.astype(float))
    return AllocationPlan.from_sizes(n, Nh)


@dataclass(frozen=True)
class StratifiedDraw:
    """Result of a stratified SRSWOR draw.

    ``frame_sizes`` are the post-exclusion stratum sizes N'_h the sample was
    drawn from, and ``by_stratum`` lists the sampled indices per stratum.
    """

    index: np.ndarray
    membership: MembershipRealization
    by_stratum: tuple
    frame_sizes: np.ndarray

    def __iter__(self):
        yield self.index
        yield self.membership

    def stratum_samples(self, values, delta=None) -> List[StratumSample]:
        """Per-stratum inputs for :func:`bigsurvey.variance.vprime_stratified_srswor`."""
        out = []
        for idx, size in zip(self.by_stratum, self.frame_sizes):
            rows = as_2d(values)[idx] if isinstance(values, np.ndarray) else \
                np.vstack([np.atleast_1d(values[i].y) for i in idx]) if len(idx) else np.empty((0, 1))
            big = None if delta is None else np.asarray(delta, dtype=bool)[idx]
            out.append(StratumSample(values=rows, frame_size=int(size), in_big=big))
        return out


def stratified_srswor(frame, plan, rng, exclude=None):
    """Independent SRSWOR in each stratum, optionally avoiding ``exclude``.

    With ``exclude`` set to a big-data index set this realises the design
    that treats the big data as a completely enumerated stratum.  Inclusion
    probabilities use the post-exclusion stratum sizes; excluded units get
    ``pi = nan``.
    """
    N = frame.N
    if plan.n is None or plan.n.size != frame.H:
        raise DomainError("plan must give an integer sample size per stratum")
    excl = np.zeros(N, dtype=bool)
    if exclude is not None:
        exclude = np.asarray(exclude)
        if exclude.dtype == bool:
            excl = exclude.copy()
        else:
            excl[exclude.astype(int)] = True
    alpha = np.zeros(N, dtype=bool)
    pi = np.full(N, np.nan)
    p2_same = np.zeros(frame.H)
    unit_stratum = np.empty(N, dtype=int)
    by_stratum = []
    frame_sizes = np.empty(frame.H, dtype=int)
    for h, (members, n_h) in enumerate(zip(frame.members, plan.n)):
        unit_stratum[members] = h
        eligible = members[~excl[members]]
        Nh = eligible.size
        if n_h > Nh:
            raise DomainError(
                f"stratum {frame.labels[h]!r} has {Nh} units left after exclusion, needs {n_h}")
        pick = eligible[srswor(Nh, n_h, rng)]
        alpha[pick] = True
        frame_sizes[h] = Nh
        if Nh:
            pi[eligible] = n_h / Nh
            p2_same[h] = n_h * (n_h - 1) / (Nh * (Nh - 1)) if Nh > 1 else n_h / Nh
        by_stratum.append(np.sort(pick))

    def joint(i, j):
        i = np.asarray(i, dtype=int)
        j = np.asarray(j, dtype=int)
        hi, hj = unit_stratum[i], unit_stratum[j]
        out = np.where(hi == hj, p2_same[hi], pi[i] * pi[j])
        return np.where(i == j, pi[i], out)

    index = np.flatnonzero(alpha)
    return StratifiedDraw(index=index, membership=MembershipRealization(alpha, pi, joint),
                          by_stratum=tuple(by_stratum), frame_sizes=frame_sizes)


def infer_stratum_samples(values, strata, alpha, pi, delta=None, *, tol=1e-6):
    """Recover per-stratum SRSWOR frames from a sample's inclusion probabilities.

    Within a stratum every sampled unit must share pi_h; the frame size is
    n_h / pi_h, which must be an integer to within ``tol``.
    """
    values = as_2d(values)
    strata = np.asarray(strata)
    alpha = check_binary(alpha, values.shape[0], name="alpha")
    pi = np.asarray(pi, dtype=float)
    out = []
    for label in np.unique(strata[alpha]):
        idx = np.flatnonzero(alpha & (strata == label))
        p = pi[idx]
        if not np.all(np.isfinite(p)) or np.ptp(p) > tol * p.max():
            raise DomainError(f"stratum {label!r}: inclusion probabilities are not constant")
        size = idx.size / p[0]
        if abs(size - round(size)) > tol * max(size, 1.0):
            raise DomainError(f"stratum {label!r}: n_h/pi_h = {size!r} is not an integer")
        big = None if delta is None else np.asarray(delta, dtype=bool)[idx]
        out.append(StratumSample(values=values[idx], frame_size=int(round(size)), in_big=big))
    return out


# -- big-data selection -----------------------------------------------------

@dataclass(frozen=True)
class BigDataMechanism:
    """Income-biased selection: units with y >= threshold are favoured.

    Each successive draw picks an unselected unit with probability
    proportional to 1 (high) or ``low_rate`` (low).  ``target_size`` fixes
    the number of selected units; when omitted ``share * N`` (rounded down)
    is used.
    """

    threshold: float = 18200.0
    low_rate: float = 0.05
    target_size: Optional[int] = None
    share: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.low_rate <= 1.0:
            raise DomainError("low_rate must lie in (0, 1]")
        if not np.isfinite(self.threshold):
            raise DomainError("threshold must be finite")
        if not 0.0 <= self.share <= 1.0:
            raise DomainError("share must lie in [0, 1]")

    def size(self, N):
        k = int(self.share * N) if self.target_size is None else int(self.target_size)
        if not 0 <= k <= N:
            raise DomainError(f"target size {k} exceeds population size {N}")
        return k

    def rates(self, y):
        return np.where(np.asarray(y, dtype=float) >= self.threshold, 1.0, self.low_rate)


def bigdata_select(y, mech, rng):
    """Big-data indicator delta from successive weighted draws without replacement.

    Uses exponential keys E_i / r_i; the ``target`` smallest keys form the
    sample, which has the same law as drawing one unit at a time with
    probability proportional to r_i among those left.
    """
    y = np.asarray(y, dtype=float).ravel()
    N = y.size
    k = mech.size(N)
    delta = np.zeros(N, dtype=np.int8)
    if k == 0:
        return delta
    keys = rng.standard_exponential(N) / mech.rates(y)
    if k == N:
        delta[:] = 1
    else:
        delta[np.argpartition(keys, k - 1)[:k]] = 1
    return delta


def single_draw_probabilities(y, mech):
    """Probability that each unit is picked in a single weighted draw."""
    r = mech.rates(y)
    return r / r.sum()


# -- design comparisons and allocation ----------------------------------------

def enumerated_stratum_ratio(F2, f):
    """(F2^2 - f) / (1 - f), the stated variance ratio when the big data is
    treated as a completely enumerated stratum."""
    F2, f = float(F2), float(f)
    if not 0.0 < f < 1.0:
        raise DomainError("f must lie in (0, 1)")
    if not 0.0 < F2 <= 1.0:
        raise DomainError("F2 must lie in (0, 1]")
    if f > F2 * F2:
        raise DomainError("ratio is negative when f > F2^2")
    return (F2 * F2 - f) / (1.0 - f)


def _fill(u, a, lo, hi, target):
    """Feasible point lo + clip(s u, 0, 1)(hi - lo) with a . f = target."""
    def g(s):
        return a @ (lo + np.clip(s * u, 0.0, 1.0) * (hi - lo)) - target
    if g(0.0) >= 0:
        return lo.copy()
    s_hi = 1.0 / max(u.min(), 1e-12)
    if g(s_hi) <= 0:
        return hi.copy()
    s = optimize.brentq(g, 0.0, s_hi, xtol=1e-14)
    return lo + np.clip(s * u, 0.0, 1.0) * (hi - lo)


def _descend(fun, x, a, lo, hi, tol, max_sweeps):
    H = x.size
    val = fun(x)
    for _ in range(max_sweeps):
        moved = 0.0
        for i in range(H):
            for j in range(i + 1, H):
                t_lo = max(a[i] * (lo[i] - x[i]), a[j] * (x[j] - hi[j]))
                t_hi = min(a[i] * (hi[i] - x[i]), a[j] * (x[j] - lo[j]))
                if t_hi - t_lo <= 0:
                    continue

                def along(t, i=i, j=j):
                    z = x.copy()
                    z[i] += t / a[i]
                    z[j] -= t / a[j]
                    return fun(np.clip(z, lo, hi))

                res = optimize.minimize_scalar(along, bounds=(t_lo, t_hi), method="bounded",
                                               options={"xatol": tol * 1e-3})
                cand = [(along(t_lo), t_lo), (along(t_hi), t_hi), (res.fun, res.x)]
                best_v, best_t = min(cand, key=lambda c: c[0])
                if best_v < val:
                    step = np.array([best_t / a[i], best_t / a[j]])
                    x[i] += step[0]
                    x[j] -= step[1]
                    x = np.clip(x, lo, hi)
                    val = best_v
                    moved = max(moved, float(np.abs(step).max()))
        if moved < tol:
            break
    return x, val


def allocate_optimal(variance_fn, f_total, bounds=None, *, F=None, n_starts=5,
                     seed=0, tol=1e-6, max_sweeps=200):
    """Minimise ``variance_fn(f)`` over per-stratum sampling fractions.

    The constraint is ``sum_h F_h f_h = f_total`` (the overall sampling
    fraction) when stratum shares ``F`` are given, else ``sum_h f_h =
    f_total``.  ``bounds`` is a pair of arrays (or scalars) ``(lo, hi)``.
    Pairwise exchange moves keep every iterate feasible; the best of
    ``n_starts`` starts (one even, the rest random) is returned.
    """
    if F is None and bounds is None:
        raise DomainError("give stratum shares F or bounds to fix the number of strata")
    if F is None and np.broadcast(*bounds).ndim == 0:
        raise DomainError("scalar bounds need stratum shares F to fix the number of strata")
    H = np.asarray(F).size if F is not None else np.broadcast(*bounds).shape[0]
    a = np.ones(H) if F is None else np.asarray(F, dtype=float)
    lo, hi = (0.0, 1.0) if bounds is None else bounds
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (H,)).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (H,)).copy()
    if np.any(lo < 0) or np.any(hi > 1) or np.any(lo > hi) or np.any(a <= 0):
        raise DomainError("invalid bounds or stratum shares")
    f_total = float(f_total)
    if not a @ lo - 1e-12 <= f_total <= a @ hi + 1e-12:
        raise DomainError(f"f_total={f_total} cannot be met within the bounds")

    def fun(f):
        v = float(variance_fn(f))
        return v if np.isfinite(v) else np.inf

    rng = np.random.default_rng(seed)
    starts = [_fill(np.ones(H), a, lo, hi, f_total)]
    starts += [_fill(rng.uniform(0.05, 1.0, H), a, lo, hi, f_total) for _ in range(n_starts - 1)]
    best = None
    for x0 in starts:
        x, v = _descend(fun, x0.copy(), a, lo, hi, tol, max_sweeps)
        if best is None or v < best[1]:
            best = (x, v)
    return AllocationPlan(f=np.clip(best[0], 0.0, 1.0), variance=best[1])
