"""Regenerate the synthetic superpopulation configs in src/bigsurvey/data.

Frequencies come from a lognormal weekly-income curve; each stratum mean is
chosen so that the solved last bracket sits at 1.5 times the previous one.
The numbers are synthetic and only mimic the shape of published income data.
"""

import json
from pathlib import Path

import numpy as np
from scipy import stats

from bigsurvey.superpop import StratumCdfSpec, _cdf_with_last

WEEKLY_MEDIAN = 960.0
POP_MEDIAN = 52 * WEEKLY_MEDIAN
BRACKETS = np.r_[np.arange(50, 1501, 50), np.arange(1600, 2501, 100),
                 np.arange(2750, 4001, 250), np.arange(4500, 9001, 500)].astype(float)

FULL = [
    ("male_24_under", 0.095, 16000), ("male_25_34", 0.095, 62000),
    ("male_35_44", 0.085, 78000), ("male_45_54", 0.080, 76000),
    ("male_55_64", 0.075, 62000), ("male_65_over", 0.075, 32000),
    ("female_24_under", 0.090, 14000), ("female_25_34", 0.095, 52000),
    ("female_35_44", 0.085, 54000), ("female_45_54", 0.080, 55000),
    ("female_55_64", 0.075, 42000), ("female_65_over", 0.070, 28000),
]
DESK = [
    ("young", 0.25, 18000), ("prime", 0.30, 60000),
    ("mature", 0.25, 65000), ("senior", 0.20, 30000),
]


def frequencies():
    g = stats.lognorm(s=0.85, scale=WEEKLY_MEDIAN)
    cdf = np.r_[0.0, g.cdf(BRACKETS), 1.0]
    r = np.round(100 * np.diff(cdf), 6)
    r[-1] = round(100 - r[:-1].sum(), 6)
    return r


def build(strata, label):
    r = frequencies()
    out = {"description": f"Synthetic {label} income superpopulation (not official data).",
           "population_median": POP_MEDIAN, "strata": []}
    for name, p, eta in strata:
        spec = StratumCdfSpec(BRACKETS, r, eta, 1.0, POP_MEDIAN, name)
        knots = spec.scale * BRACKETS
        cum = np.cumsum(r) / 100
        cum[-1] = 1.0
        mean = _cdf_with_last(knots, cum, 1.5 * knots[-1]).mean
        out["strata"].append({"name": name, "proportion": p, "median": eta,
                              "mean": round(mean, 2), "brackets": BRACKETS.tolist(),
                              "frequencies": r.tolist()})
    return out


if __name__ == "__main__":
    data = Path(__file__).resolve().parents[1] / "src" / "bigsurvey" / "data"
    data.mkdir(exist_ok=True)
    for fname, strata, label in [("australia_like.json", FULL, "12-stratum"),
                                 ("desk.json", DESK, "4-stratum desk-scale")]:
        with open(data / fname, "w") as fh:
            json.dump(build(strata, label), fh, indent=1)
            fh.write("\n")
