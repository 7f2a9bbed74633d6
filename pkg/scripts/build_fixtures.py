"""Regenerate the bundled fixture files under src/scarcity/data/.

growth_series.csv holds synthetic proxy series whose log-linear trends over
1993-2016 have exactly the rates and standard errors of the published
growth table (residuals are orthogonal to [1, year] and scaled to the
target SE). They are calibration fixtures, not observed data.

fixture_observations.csv is a synthetic meta-analysis sample in which part
of the incomes are reported as bracket tables. cpi.csv and ppp.csv are
illustrative conversion tables (2% yearly inflation, made-up PPP factors)
used to exercise the currency pipeline.
"""

import csv
from pathlib import Path

import numpy as np

from scarcity.dataset import serialize
from scarcity.synth import GeneratorConfig, generate

DATA = Path(__file__).resolve().parents[1] / "src" / "scarcity" / "data"
YEARS = np.arange(1993, 2017)

# name: (slope of ln(transformed series), slope SE, level in 1993, units)
# air is stored as raw PM2.5, so its raw slope is minus the growth rate;
# climate is stored as temperature anomaly, fitted as ln(2 - anomaly).
TARGETS = {
    "forest": (-0.0011, 0.00002, 41.28, "million km2"),
    "lpi": (-0.0284, 0.0006, 0.62, "index"),
    "rli": (-0.0042, 0.0001, 0.78, "index"),
    "air": (0.0016, 0.0017, 38.5, "ug/m3"),
    "climate": (-0.0150, 0.0014, 1.52, "degC remaining"),
    "gdp": (0.0182, 0.0002, 7150.0, "2010 USD per capita"),
}


def calibrated(slope, se, level, phase):
    t = (YEARS - YEARS[0]).astype(float)
    basis = np.column_stack([np.ones_like(t), t])
    wiggle = np.sin(0.9 * t + phase) + 0.5 * np.cos(2.3 * t + 2 * phase)
    resid = wiggle - basis @ np.linalg.lstsq(basis, wiggle, rcond=None)[0]
    sxx = np.sum((t - t.mean()) ** 2)
    target_ssr = se ** 2 * sxx * (t.size - 2)
    resid *= np.sqrt(target_ssr / np.sum(resid ** 2))
    return np.exp(np.log(level) + slope * t + resid)


def write_growth():
    rows = []
    for i, (name, (slope, se, level, units)) in enumerate(TARGETS.items()):
        values = calibrated(slope, se, level, phase=0.7 * i)
        if name == "climate":
            values = 2.0 - values
        for y, v in zip(YEARS, values):
            rows.append((name, int(y), "%.12g" % v, units))
    with open(DATA / "growth_series.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "year", "value", "units"])
        w.writerows(rows)


def write_conversion():
    ppp = {"USA": 1.0, "CAN": 0.82, "BRA": 0.45, "KEN": 0.021, "DEU": 1.33, "GBR": 1.42,
           "CHN": 0.24, "IND": 0.048, "AUS": 0.73}
    with open(DATA / "ppp.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["country", "ppp_to_usd"])
        for c, f in ppp.items():
            w.writerow([c, f])
    with open(DATA / "cpi.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["country", "year", "cpi"])
        for c in ppp:
            for y in range(1985, 2021):
                w.writerow([c, y, "%.6f" % (100.0 * 1.02 ** (y - 2020))])


def write_observations():
    cfg = GeneratorConfig(xi_true=0.8, n_studies=80, obs_per_study=(2, 10),
                          singleton_fraction=0.5, bracket_fraction=0.2, seed=2020)
    serialize(generate(cfg), DATA / "fixture_observations.csv")


if __name__ == "__main__":
    DATA.mkdir(parents=True, exist_ok=True)
    write_growth()
    write_conversion()
    write_observations()
