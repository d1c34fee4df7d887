"""Monte Carlo study comparing big-data-only, survey-only and integrated estimators.

Each replicate draws one population of the largest size and takes prefixes
for the smaller sizes, so populations are nested within a replicate.  For
every population size the replicate then

1. selects the big data B with an income-biased mechanism,
2. draws a Neyman-allocated stratified sample A from U,
3. draws a second stratified sample A' from U minus B, and
4. estimates each statistic four ways: unweighted on B, Horvitz-Thompson
   on A, integrated weights with A, integrated weights with A'.

Replicates are keyed by (population index, replicate id) and reduced in that
order, so results do not depend on the number of worker processes.
"""

import csv
import hashlib
import json
import os
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .design import (BigDataMechanism, StratifiedFrame, neyman_allocate, stratified_srswor,
                     stream, bigdata_select)
from .estfun import gini_function, quantile_function
from .exceptions import ConfigError, DomainError, NumericError, SolverError
from .solve import WeightedEcdf, _gini_from_ecdf
from .superpop import (ReferenceDesign, SuperpopModel, load_superpop, reference_vprime,
                       superpop_from_dict, true_functionals)
from .variance import assemble, density_jacobian, jacobian_avg, v_super_iid, \
    vprime_stratified_srswor
from .weights import horvitz_thompson, integrate

__all__ = [
    "ESTIMATORS",
    "STATISTICS",
    "StudyConfig",
    "ReplicateResult",
    "SummaryCell",
    "StudySummary",
    "run_replicate",
    "run_study",
    "summarize",
    "export",
    "read_export",
]

ESTIMATORS = ("bigdata", "survey", "integrated", "strat_integrated")
STATISTICS = ("median", "gini")
REFERENCE_DESIGNS = {"survey": "survey", "integrated": "integrated",
                     "strat_integrated": "strat_integrated"}
VARIANCE_CI_METHOD = "normal approximation with fourth-central-moment standard error"


@dataclass(frozen=True)
class StudyConfig:
    superpop: object = "desk.json"
    N_grid: Tuple[int, ...] = (20_000, 40_000, 60_000, 80_000)
    fraction: float = 1e-2
    mechanism: BigDataMechanism = field(default_factory=BigDataMechanism)
    R: int = 500
    seed: int = 12345
    statistics: Tuple[str, ...] = STATISTICS
    reference_M: int = 1_000_000
    max_failure_rate: float = 0.01
    variance_reports: bool = False

    def __post_init__(self):
        grid = tuple(int(n) for n in self.N_grid)
        object.__setattr__(self, "N_grid", grid)
        object.__setattr__(self, "statistics", tuple(self.statistics))
        if not grid or any(b <= a for a, b in zip(grid, grid[1:])) or grid[0] < 2:
            raise ConfigError("N_grid must be a strictly increasing list of sizes >= 2")
        if not 0.0 < float(self.fraction) < 1.0:
            raise ConfigError(f"fraction must lie in (0, 1), got {self.fraction!r}")
        if int(self.R) < 2:
            raise ConfigError("R must be at least 2")
        if int(self.seed) < 0:
            raise ConfigError("seed must be nonnegative")
        if not self.statistics or any(s not in STATISTICS for s in self.statistics):
            raise ConfigError(f"statistics must be a nonempty subset of {STATISTICS}")
        if not 0.0 <= self.max_failure_rate <= 1.0:
            raise ConfigError("max_failure_rate must lie in [0, 1]")
        if not isinstance(self.superpop, (str, dict)):
            raise ConfigError("superpop must be a file name or an inline config")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown study config keys: {sorted(unknown)}")
        try:
            if "mechanism" in d and not isinstance(d["mechanism"], BigDataMechanism):
                d["mechanism"] = BigDataMechanism(**d["mechanism"])
            return cls(**d)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid study config: {exc}") from exc

    def to_dict(self):
        d = asdict(self)
        d["N_grid"] = list(self.N_grid)
        d["statistics"] = list(self.statistics)
        return d

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def model(self):
        return _model_cached(json.dumps(self.superpop, sort_keys=True))


@lru_cache(maxsize=8)
def _model_cached(key) -> SuperpopModel:
    ref = json.loads(key)
    return superpop_from_dict(ref) if isinstance(ref, dict) else load_superpop(ref)


@dataclass
class ReplicateResult:
    k: int
    replicate: int
    N: int
    estimates: Dict[Tuple[str, str], float] = field(default_factory=dict)
    variances: Dict[Tuple[str, str], dict] = field(default_factory=dict)
    failed: bool = False
    reason: str = ""


def _frame_without(frame, excluded):
    members = tuple(m[~excluded[m]] for m in frame.members)
    return StratifiedFrame(labels=frame.labels, members=members)


def _estimate(statistic, y, w, order):
    ecdf = WeightedEcdf(y, w, order=order)
    if statistic == "median":
        return ecdf.quantile(0.5)[0]
    return _gini_from_ecdf(ecdf)


def _variance(statistic, y, w, delta, draw, N, order, theta):
    if statistic == "median":
        ef = quantile_function(0.5)
        jac = density_jacobian(y, w, theta, order=order)
    else:
        ef = gini_function(y, w, order=order)
        jac = jacobian_avg(ef, y, w, theta)
    vp = vprime_stratified_srswor(ef, draw.stratum_samples(y, delta), theta, N)
    rep = assemble(jac, vp, v_super_iid(ef, y, w, theta), N)
    return {"design_var": float(rep.design_var[0, 0]), "joint_var": float(rep.joint_var[0, 0])}


def _population(cfg, replicate, model=None):
    model = cfg.model() if model is None else model
    return model.sample(cfg.N_grid[-1], stream(cfg.seed, replicate, "population"))


def run_replicate(cfg, k, replicate, model=None, population=None):
    """Steps for one population size ``cfg.N_grid[k]`` in one replicate."""
    N = cfg.N_grid[k]
    y_all, s_all = _population(cfg, replicate, model) if population is None else population
    y, strata = y_all[:N], s_all[:N]
    res = ReplicateResult(k=k, replicate=replicate, N=N)
    tag = f"{k}"
    try:
        delta = bigdata_select(y, cfg.mechanism, stream(cfg.seed, replicate, "bigdata:" + tag))
        big = delta.astype(bool)
        frame = StratifiedFrame.from_labels(strata)
        n = int(round(cfg.fraction * N))
        plan = neyman_allocate(frame, y, n)
        draw_a = stratified_srswor(frame, plan, stream(cfg.seed, replicate, "survey:" + tag))
        plan_p = neyman_allocate(_frame_without(frame, big), y, n)
        draw_p = stratified_srswor(frame, plan_p, stream(cfg.seed, replicate, "survey_prime:" + tag),
                                   exclude=big)
        weights = {
            "bigdata": delta.astype(float),
            "survey": horvitz_thompson(draw_a.membership).w,
            "integrated": integrate(delta, horvitz_thompson(draw_a.membership)).w,
            "strat_integrated": integrate(delta, horvitz_thompson(draw_p.membership)).w,
        }
        draws = {"integrated": draw_a, "strat_integrated": draw_p}
        order = np.argsort(y, kind="stable")
        for stat in cfg.statistics:
            for est in ESTIMATORS:
                theta = float(_estimate(stat, y, weights[est], order))
                if not np.isfinite(theta):
                    raise NumericError(f"{stat}/{est} estimate is not finite")
                res.estimates[(stat, est)] = theta
                if cfg.variance_reports and est in draws:
                    res.variances[(stat, est)] = _variance(
                        stat, y, weights[est], delta, draws[est], N, order, theta)
    except (DomainError, SolverError, NumericError) as exc:
        res.failed = True
        res.reason = f"{type(exc).__name__}: {exc}"
        res.estimates.clear()
        res.variances.clear()
    return res


def _replicate_task(args):
    cfg, replicate = args
    population = _population(cfg, replicate)
    return [run_replicate(cfg, k, replicate, population=population)
            for k in range(len(cfg.N_grid))]


# -- summaries -----------------------------------------------------------------

@dataclass(frozen=True)
class SummaryCell:
    N: int
    statistic: str
    estimator: str
    bias: float
    bias_lo: float
    bias_hi: float
    var: float
    var_lo: float
    var_hi: float
    n_ok: int
    n_failed: int
    status: str = "ok"


@dataclass
class StudySummary:
    cells: List[SummaryCell] = field(default_factory=list)
    references: List[Tuple[int, str, str, float]] = field(default_factory=list)
    truths: Optional[dict] = None

    def cell(self, N, statistic, estimator):
        for c in self.cells:
            if (c.N, c.statistic, c.estimator) == (N, statistic, estimator):
                return c
        raise KeyError((N, statistic, estimator))

    def reference(self, statistic, estimator):
        for _, s, e, v in self.references:
            if (s, e) == (statistic, estimator):
                return v
        raise KeyError((statistic, estimator))


def _summarize_values(x, truth, N):
    R = x.size
    mean = float(x.mean())
    s2 = float(x.var(ddof=1))
    se_b = np.sqrt(s2 / R)
    m4 = float(np.mean((x - mean) ** 4))
    se_v = N * np.sqrt(max(m4 - s2 * s2, 0.0) / R)
    bias = mean - truth
    return bias, bias - 1.96 * se_b, bias + 1.96 * se_b, N * s2, N * s2 - 1.96 * se_v, N * s2 + 1.96 * se_v


def summarize(results, truths, max_failure_rate=0.01, statistics=None):
    """Bias and size-adjusted variance with 95% CIs per (N, statistic, estimator).

    ``results`` is an iterable of :class:`ReplicateResult`; ``truths`` maps
    statistic names to true values (or is a :class:`TrueFunctionals`).
    Cells are produced for every estimator of ``statistics``; when omitted,
    the (statistic, estimator) pairs seen in the results are used.
    """
    results = sorted(results, key=lambda r: (r.k, r.replicate))
    get = truths.value if hasattr(truths, "value") else truths.__getitem__
    if statistics is not None:
        keys = [(s, e) for s in statistics for e in ESTIMATORS]
    else:
        keys = []
        for r in results:
            for stat, est in r.estimates:
                if (stat, est) not in keys:
                    keys.append((stat, est))
    stats = [s for s in STATISTICS if any(k[0] == s for k in keys)]
    summary = StudySummary()
    by_N = {}
    for r in results:
        by_N.setdefault(r.N, []).append(r)
    for N in sorted(by_N):
        rs = by_N[N]
        failed = sum(r.failed for r in rs)
        ok = [r for r in rs if not r.failed]
        for stat in stats:
            for est in ESTIMATORS:
                if (stat, est) not in keys:
                    continue
                x = np.array([r.estimates[(stat, est)] for r in ok])
                nan = float("nan")
                if failed > max_failure_rate * len(rs):
                    summary.cells.append(SummaryCell(N, stat, est, nan, nan, nan, nan, nan, nan,
                                                     len(ok), failed, "aborted"))
                elif x.size < 2:
                    summary.cells.append(SummaryCell(N, stat, est, nan, nan, nan, nan, nan, nan,
                                                     len(ok), failed, "insufficient"))
                else:
                    vals = _summarize_values(x, get(stat), N)
                    summary.cells.append(SummaryCell(N, stat, est, *map(float, vals),
                                                     len(ok), failed))
    return summary


def _references(cfg, model, truths):
    out = []
    for stat in cfg.statistics:
        for est, kind in REFERENCE_DESIGNS.items():
            design = ReferenceDesign(kind=kind, fraction=cfg.fraction, mechanism=cfg.mechanism)
            ref = reference_vprime(model, stat, design, cfg.reference_M,
                                   stream(cfg.seed, 0, f"reference:{stat}:{kind}"),
                                   theta=truths.value(stat))
            out.append((stat, est, float(ref.joint_asymptotic)))
    return out


def run_study(cfg, workers=1, *, strict=True, progress=None):
    """Run every replicate and summarise; identical output for any ``workers``."""
    model = cfg.model()
    truths = true_functionals(model)
    tasks = [(cfg, r) for r in range(cfg.R)]
    results = []
    if workers is None:
        workers = os.cpu_count() or 1
    if workers <= 1:
        for i, t in enumerate(tasks):
            results.extend(_replicate_task(t))
            if progress:
                progress(i + 1, cfg.R)
    else:
        with ProcessPoolExecutor(max_workers=int(workers)) as pool:
            for i, rs in enumerate(pool.map(_replicate_task, tasks,
                                            chunksize=max(1, cfg.R // (4 * workers)))):
                results.extend(rs)
                if progress:
                    progress(i + 1, cfg.R)
    summary = summarize(results, truths, cfg.max_failure_rate, cfg.statistics)
    summary.truths = {"median": truths.median, "gini": truths.gini, "mean": truths.mean}
    if cfg.reference_M:
        refs = _references(cfg, model, truths)
        summary.references = [(N, s, e, v) for N in cfg.N_grid for s, e, v in refs]
    if strict:
        bad = [c for c in summary.cells if c.status == "aborted"]
        if bad:
            c = bad[0]
            raise NumericError(f"study cell N={c.N} {c.statistic}/{c.estimator} aborted: "
                               f"{c.n_failed} of {c.n_failed + c.n_ok} replicates failed")
    return summary, results


# -- export ------------------------------------------------------------------

FIGURE_COLUMNS = ("N", "estimator", "statistic", "value", "ci_lo", "ci_hi")
REFERENCE_COLUMNS = ("N", "estimator", "statistic", "value")


def _fmt(x):
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def export(summary, path, statistics=STATISTICS, manifest=None):
    """Write one CSV per figure plus asymptotic reference series.

    Files: ``{stat}_bias.csv``, ``{stat}_var.csv`` and
    ``{stat}_var_reference.csv`` for each statistic, and optionally
    ``manifest.json``.  Floats are written with round-trip precision.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    written = []
    for stat in statistics:
        for kind in ("bias", "var"):
            fname = path / f"{stat}_{kind}.csv"
            with open(fname, "w", newline="") as fh:
                wr = csv.writer(fh, lineterminator="\n")
                wr.writerow(FIGURE_COLUMNS)
                for c in summary.cells:
                    if c.statistic != stat:
                        continue
                    if kind == "bias":
                        row = (c.N, c.estimator, c.statistic, c.bias, c.bias_lo, c.bias_hi)
                    else:
                        row = (c.N, c.estimator, c.statistic, c.var, c.var_lo, c.var_hi)
                    wr.writerow([_fmt(v) for v in row])
            written.append(fname)
        fname = path / f"{stat}_var_reference.csv"
        with open(fname, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(REFERENCE_COLUMNS)
            for N, s, e, v in summary.references:
                if s == stat:
                    wr.writerow([_fmt(x) for x in (N, e, s, float(v))])
        written.append(fname)
    if manifest is not None:
        fname = path / "manifest.json"
        with open(fname, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        written.append(fname)
    return written


def read_export(path, statistics=STATISTICS):
    """Parse CSVs written by :func:`export` back into a :class:`StudySummary`.

    Replicate counts and cell status are not part of the CSVs and come back
    as zero and ``"ok"``.
    """
    path = Path(path)
    rows = {}
    for stat in statistics:
        for kind in ("bias", "var"):
            fname = path / f"{stat}_{kind}.csv"
            if not fname.exists():
                continue
            with open(fname, newline="") as fh:
                for r in csv.DictReader(fh):
                    key = (int(r["N"]), r["statistic"], r["estimator"])
                    rows.setdefault(key, {})[kind] = tuple(
                        float(r[c]) for c in ("value", "ci_lo", "ci_hi"))
    summary = StudySummary()
    for (N, stat, est), d in rows.items():
        b = d.get("bias", (np.nan,) * 3)
        v = d.get("var", (np.nan,) * 3)
        summary.cells.append(SummaryCell(N, stat, est, *b, *v, 0, 0))
    for stat in statistics:
        fname = path / f"{stat}_var_reference.csv"
        if fname.exists():
            with open(fname, newline="") as fh:
                for r in csv.DictReader(fh):
                    summary.references.append((int(r["N"]), r["statistic"], r["estimator"],
                                               float(r["value"])))
    return summary


def build_manifest(cfg, summary):
    import scipy
    import sklearn

    from . import __version__
    return {
        "seed": int(cfg.seed),
        "config_hash": cfg.config_hash(),
        "config": cfg.to_dict(),
        "versions": {"bigsurvey": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "scikit-learn": sklearn.__version__,
                     "python": platform.python_version()},
        "failures": [{"N": c.N, "statistic": c.statistic, "estimator": c.estimator,
                      "failed": c.n_failed, "status": c.status} for c in summary.cells],
        "variance_ci_method": VARIANCE_CI_METHOD,
        "truths": summary.truths,
    }
