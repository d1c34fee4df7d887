"""Command-line interface: ``bigsurvey {estimate,variance,allocate,superpop,simulate}``.

Exit codes: 0 success, 2 configuration or validation error, 3 numeric
failure, 4 I/O error.
"""

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .design import allocate_optimal
from .estimators import WeightedEstimator
from .exceptions import ConfigError, DomainError
from .weights import MembershipRealization, bigdata_weights, unit_weights

log = logging.getLogger("bigsurvey")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _g(x):
    return "nan" if x is None else f"{float(x):.6g}"


def _write_json(out, name, payload):
    if out is None:
        return None
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    fname = path / name
    with open(fname, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return fname


# -- data ingestion --------------------------------------------------------------

def read_data(path):
    """Parse a CSV with named columns y, x1..xk, stratum, delta, alpha, pi.

    Blank cells are read as missing; they are only allowed where the unit is
    not observed.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if "y" not in header:
            raise ConfigError(f"{path}: missing required column 'y'")
        xcols = sorted((c for c in header if c.startswith("x") and c[1:].isdigit()),
                       key=lambda c: int(c[1:]))
        expected = [f"x{i}" for i in range(1, len(xcols) + 1)]
        if xcols != expected:
            raise ConfigError(f"{path}: regressor columns must be x1..xk, got {xcols}")
        known = {"y", "stratum", "delta", "alpha", "pi", *xcols}
        extra = [c for c in header if c not in known]
        if extra:
            raise ConfigError(f"{path}: unknown columns {extra}")
        cols = {c: [] for c in header}
        for row in reader:
            line = reader.line_num
            for c in header:
                cell = (row.get(c) or "").strip()
                try:
                    cols[c].append(float(cell) if cell else np.nan)
                except ValueError:
                    raise ConfigError(f"{path}: line {line}: column {c!r}: "
                                      f"cannot parse {cell!r}") from None
    data = {c: np.array(v, dtype=float) for c, v in cols.items()}
    data["xcols"] = xcols
    n = len(data["y"])
    if n == 0:
        raise ConfigError(f"{path}: no data rows")
    for c in ("delta", "alpha"):
        if c in data:
            bad = np.flatnonzero(~np.isin(data[c], (0.0, 1.0)))
            if bad.size:
                raise ConfigError(f"{path}: line {bad[0] + 2}: column {c!r} must be 0 or 1")
    return data


def _census(N):
    return MembershipRealization(np.ones(N, dtype=bool), np.ones(N),
                                 lambda i, j: np.ones(np.shape(i)))


def _fit_from_data(args, data):
    N = len(data["y"])
    scheme = args.weights
    need = {"unit": [], "ht": ["alpha", "pi"], "di": ["alpha", "pi", "delta"],
            "bigdata": ["delta"]}[scheme]
    missing = [c for c in need if c not in data]
    if missing:
        raise ConfigError(f"weights={scheme!r} needs column(s) {missing}")
    delta = data["delta"].astype(int) if scheme in ("di", "bigdata") else None
    if scheme == "unit":
        design, weight = _census(N), unit_weights(N)
    elif scheme == "bigdata":
        design, weight = None, bigdata_weights(delta)
        delta = None
    else:
        design = MembershipRealization(data["alpha"].astype(int), data["pi"])
        weight = None
    if design is not None:
        observed = design.alpha if delta is None else (design.alpha | delta.astype(bool))
    else:
        observed = weight.w > 0
    if np.any(~np.isfinite(data["y"][observed])):
        line = int(np.flatnonzero(observed & ~np.isfinite(data["y"]))[0]) + 2
        raise ConfigError(f"line {line}: observed unit has no value for 'y'")
    if args.statistic == "linreg":
        if not data["xcols"]:
            raise ConfigError("statistic='linreg' needs regressor columns x1..xk")
        X, y = np.column_stack([data[c] for c in data["xcols"]]), data["y"]
    else:
        X, y = data["y"], None
    strata = data.get("stratum")
    if strata is None and scheme in ("ht", "di"):
        strata = np.zeros(N)

    def build(variance):
        return WeightedEstimator(statistic=args.statistic, p=args.p, variance=variance)

    if scheme == "unit":
        mode = "ht"
    elif scheme == "bigdata":
        mode = "none"
    else:
        mode = "stratified"
    try:
        est = build(mode).fit(X, y, sample_weight=weight, design=design, delta=delta,
                              strata=strata if mode == "stratified" else None)
    except (DomainError, ArithmeticError) as exc:
        if mode == "none":
            raise
        log.warning("variance estimation failed (%s); reporting nan standard errors", exc)
        est = build("none").fit(X, y, sample_weight=weight, design=design, delta=delta)
    return est


def cmd_estimate(args):
    data = read_data(args.data)
    est = _fit_from_data(args, data)
    rep = est.report_
    payload = rep.to_dict()
    dse = rep.design_se if rep.design_se is not None else [None] * rep.theta.size
    jse = rep.joint_se if rep.joint_se is not None else [None] * rep.theta.size
    for k, th in enumerate(rep.theta):
        label = args.statistic if rep.theta.size == 1 else f"{args.statistic}[{k}]"
        print(f"{label}: {_g(th)}  design SE: {_g(dse[k])}  joint SE: {_g(jse[k])}")
    print(f"weights: {rep.weight_scheme}  observed: {rep.n_observed} of {rep.N}")
    _write_json(args.out, "estimate.json", payload)
    return EXIT_OK


def cmd_variance(args):
    data = read_data(args.data)
    est = _fit_from_data(args, data)
    rep = est.report_
    if rep.design_var is None:
        raise DomainError("no design-based variance is available for these weights")
    print(f"theta: {' '.join(_g(t) for t in rep.theta)}")
    for name, mat in (("design_var", rep.design_var), ("joint_var", rep.joint_var)):
        rows = "; ".join(" ".join(_g(v) for v in r) for r in np.atleast_2d(mat))
        print(f"{name}: {rows}")
    _write_json(args.out, "variance.json", rep.to_dict())
    return EXIT_OK


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


def cmd_allocate(args):
    """Optimal stratum fractions for a scalar statistic.

    The frame file lists strata with their size and the standard deviation
    of psi within the stratum; ``jacobian`` (default -1, the mean) scales the
    predicted variance.
    """
    if args.config is None:
        raise ConfigError("allocate needs --config FRAME.json")
    frame = _load_json(args.config)
    try:
        sizes = np.array([float(s["size"]) for s in frame["strata"]])
        sds = np.array([float(s["sd"]) for s in frame["strata"]])
        jac = float(frame.get("jacobian", -1.0 if args.statistic == "mean" else np.nan))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid frame file: {exc}") from exc
    if not np.isfinite(jac) or jac == 0:
        raise ConfigError(f"statistic {args.statistic!r} needs a nonzero 'jacobian' in the frame")
    if np.any(sizes < 2) or np.any(sds < 0):
        raise ConfigError("stratum sizes must be >= 2 and sd >= 0")
    N = sizes.sum()
    F = sizes / N
    f_total = float(args.f_total)
    if not 0.0 < f_total <= 1.0:
        raise ConfigError("--f-total must lie in (0, 1]")

    def design_var(f):
        f = np.asarray(f, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(f >= 1.0, 0.0, F * (1.0 - f) / f * sds ** 2)
        return float(np.sum(terms)) / (N * jac * jac)

    lo = np.minimum(2.0 / sizes, 1.0)
    plan = allocate_optimal(design_var, f_total, (lo, np.ones_like(lo)), F=F, seed=args.seed or 0)
    n = np.round(plan.f * sizes).astype(int)
    for h, (fh, nh) in enumerate(zip(plan.f, n)):
        print(f"stratum {h}: f_h={_g(fh)}  n_h~{nh}")
    print(f"predicted design variance: {_g(plan.variance)}")
    payload = plan.to_dict()
    payload["n_rounded"] = n.tolist()
    payload["f_total"] = f_total
    _write_json(args.out, "allocation.json", payload)
    return EXIT_OK


def cmd_superpop(args):
    from .design import stream
    from .superpop import ReferenceDesign, load_superpop, reference_vprime, true_functionals

    model = load_superpop(args.config or "desk.json")
    tf = true_functionals(model)
    for h, (p, comp) in enumerate(zip(model.p, model.components)):
        name = model.names[h] if model.names else h
        print(f"stratum {name}: p={_g(p)}  mean={_g(comp.mean)}  median={_g(comp.ppf(0.5))}  "
              f"upper={_g(comp.upper)}")
    print(f"median: {_g(tf.median)}  mean: {_g(tf.mean)}  gini: {_g(tf.gini)}")
    payload = {"median": tf.median, "mean": tf.mean, "gini": tf.gini,
               "proportions": model.p.tolist(),
               "stratum_means": [c.mean for c in model.components]}
    if args.reference:
        refs = {}
        for stat in ("median", "gini"):
            for kind in ("survey", "integrated", "strat_integrated"):
                r = reference_vprime(model, stat, ReferenceDesign(kind=kind, fraction=args.fraction),
                                     args.reference, stream(args.seed or 0, 0, f"reference:{stat}:{kind}"))
                refs[f"{stat}/{kind}"] = r.to_dict()
                print(f"{stat}/{kind}: N*Var -> {_g(r.joint_asymptotic)}")
        payload["reference"] = refs
    _write_json(args.out, "superpop.json", payload)
    return EXIT_OK


def cmd_simulate(args):
    from .mc import StudyConfig, build_manifest, export, run_study

    cfg_dict = _load_json(args.config) if args.config else {}
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    cfg = StudyConfig.from_dict(cfg_dict)
    cfg.model()  # validates the superpopulation file before any replicate runs
    workers = args.workers if args.workers is not None else (os.cpu_count() or 1)

    def progress(done, total):
        if done == total or done % max(1, total // 10) == 0:
            log.info("replicates %d/%d", done, total)

    summary, _ = run_study(cfg, workers=workers, progress=progress)
    out = args.out or "."
    files = export(summary, out, cfg.statistics, manifest=build_manifest(cfg, summary))
    for c in summary.cells:
        print(f"N={c.N} {c.statistic:6s} {c.estimator:16s} bias={_g(c.bias)} "
              f"[{_g(c.bias_lo)}, {_g(c.bias_hi)}]  N*var={_g(c.var)} "
              f"[{_g(c.var_lo)}, {_g(c.var_hi)}]")
    log.info("wrote %s", ", ".join(str(f) for f in files))
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON configuration file")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--seed", type=int, metavar="U64", help="master seed override")
    common.add_argument("--workers", type=int, metavar="N",
                        help="worker processes (default: available CPUs)")
    common.add_argument("--verbose", "-v", action="store_true")

    parser = argparse.ArgumentParser(
        prog="bigsurvey",
        description="Estimating equations that combine big data with probability samples.")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, func, helptext in (("estimate", cmd_estimate, "point estimate with standard errors"),
                                 ("variance", cmd_variance, "variance components")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("data", help="CSV with columns y[,x1..xk][,stratum][,delta][,alpha][,pi]")
        p.add_argument("--statistic", default="mean",
                       choices=["mean", "median", "quantile", "gini", "linreg"])
        p.add_argument("--p", type=float, default=0.5, help="quantile level")
        p.add_argument("--weights", default="unit", choices=["unit", "ht", "di", "bigdata"])
        p.set_defaults(func=func)

    p = sub.add_parser("allocate", parents=[common], help="optimal stratum sampling fractions")
    p.add_argument("--f-total", type=float, required=True, help="overall sampling fraction")
    p.add_argument("--statistic", default="mean")
    p.set_defaults(func=cmd_allocate)

    p = sub.add_parser("superpop", parents=[common], help="inspect a superpopulation config")
    p.add_argument("--reference", type=int, default=0, metavar="M",
                   help="also compute reference variances from M draws")
    p.add_argument("--fraction", type=float, default=1e-2)
    p.set_defaults(func=cmd_superpop)

    p = sub.add_parser("simulate", parents=[common], help="run a Monte Carlo study")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ArithmeticError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
