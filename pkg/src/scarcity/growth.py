"""Exponential growth rates of ecosystem-service proxies and their aggregation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

DEFAULT_WINDOW = (1993, 2016)
RECENT_WINDOW = (2010, 2016)
CLIMATE_CAP = 2.0

COMPONENTS = ("forest", "lpi", "rli", "air", "climate")
CATEGORIES = {
    "regulating": ("forest", "lpi", "rli", "air", "climate"),
    "cultural": ("forest", "lpi", "rli"),
    "aggregate": ("forest", "lpi", "rli", "air", "climate"),
}


class GrowthError(ValueError):
    pass


@dataclass(frozen=True)
class TimeSeries:
    """Yearly observations of one proxy.

    ``transform`` is ``"identity"``, ``"negate_growth"`` (the proxy is a bad,
    so its growth enters with the opposite sign) or ``"remaining_budget"``
    (growth of ``cap - value``).
    """

    name: str
    years: tuple
    values: tuple
    units: str = ""
    transform: str = "identity"
    cap: float = CLIMATE_CAP

    def __post_init__(self):
        years = tuple(int(y) for y in self.years)
        values = tuple(float(v) for v in self.values)
        object.__setattr__(self, "years", years)
        object.__setattr__(self, "values", values)
        if len(years) != len(values):
            raise GrowthError("years and values differ in length")
        if any(b <= a for a, b in zip(years, years[1:])):
            raise GrowthError("years must be strictly increasing in series %r" % self.name)
        if self.transform not in ("identity", "negate_growth", "remaining_budget"):
            raise GrowthError("unknown transform %r" % self.transform)

    def transformed(self):
        values = np.asarray(self.values)
        if self.transform == "remaining_budget":
            values = self.cap - values
        bad = np.flatnonzero(values <= 0)
        if bad.size:
            raise GrowthError("series %r: non-positive transformed value in year %d"
                              % (self.name, self.years[bad[0]]))
        return values


@dataclass(frozen=True)
class GrowthEstimate:
    g: float
    se: float
    window: tuple
    n_points: int
    name: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.se < 0:
            raise GrowthError("standard error must be non-negative")

    def to_dict(self):
        return {"indicator": self.name, "g": self.g, "se": self.se,
                "window": list(self.window), "n_points": self.n_points, **self.meta}


def _ols_slope(t, z):
    t = np.asarray(t, dtype=float)
    z = np.asarray(z, dtype=float)
    tc = t - t.mean()
    sxx = tc @ tc
    slope = (tc @ (z - z.mean())) / sxx
    intercept = z.mean() - slope * t.mean()
    resid = z - intercept - slope * t
    dof = t.size - 2
    s2 = max(float(resid @ resid) / dof, 0.0)
    return slope, math.sqrt(s2 / sxx), intercept


class ExponentialGrowth(RegressorMixin, BaseEstimator):
    """Log-linear trend ``ln(value) = a + g * year``.

    ``fit`` takes years as ``X`` (1-d or a single column) and strictly
    positive values as ``y``; ``growth_rate_`` and ``growth_se_`` hold the
    slope and its conventional OLS standard error.
    """

    def fit(self, X, y):
        years = np.asarray(X, dtype=float).reshape(-1)
        y = np.asarray(y, dtype=float)
        if years.size != y.size:
            raise GrowthError("years and values differ in length")
        if years.size < 3:
            raise GrowthError("need at least 3 points, got %d" % years.size)
        if np.any(y <= 0):
            raise GrowthError("values must be positive for a log-linear fit")
        self.growth_rate_, self.growth_se_, self.intercept_ = _ols_slope(years, np.log(y))
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "growth_rate_")
        years = np.asarray(X, dtype=float).reshape(-1)
        return np.exp(self.intercept_ + self.growth_rate_ * years)


def fit_exponential_growth(series, window=DEFAULT_WINDOW):
    """Growth rate and standard error of ``series`` within ``window`` (inclusive)."""
    years = np.asarray(series.years)
    values = series.transformed()
    if window is not None:
        mask = (years >= window[0]) & (years <= window[1])
        years, values = years[mask], values[mask]
    if years.size < 3:
        raise GrowthError("series %r has %d points in window %r; need at least 3"
                          % (series.name, years.size, window))
    model = ExponentialGrowth().fit(years, values)
    g = -model.growth_rate_ if series.transform == "negate_growth" else model.growth_rate_
    return GrowthEstimate(float(g), float(model.growth_se_), (int(years[0]), int(years[-1])),
                          int(years.size), series.name)


def aggregate_category(members, estimates, name=""):
    """Unweighted mean of member growth rates; the largest member SE is carried."""
    members = list(members)
    missing = [m for m in members if m not in estimates]
    if missing:
        raise GrowthError("missing growth estimate(s) for %s" % ", ".join(missing))
    if not members:
        raise GrowthError("category has no members")
    picked = [estimates[m] for m in members]
    g = math.fsum(e.g for e in picked) / len(picked)
    se_member = max(members, key=lambda m: (estimates[m].se, m))
    start = max(e.window[0] for e in picked)
    end = min(e.window[1] for e in picked)
    return GrowthEstimate(g, estimates[se_member].se, (start, end),
                          min(e.n_points for e in picked), name,
                          meta={"max_se_member": se_member})


def growth_gap(g_c, g_e):
    """Difference ``g_C - g_E`` with independent-error standard error."""
    return GrowthEstimate(
        g_c.g - g_e.g, math.hypot(g_c.se, g_e.se),
        (max(g_c.window[0], g_e.window[0]), min(g_c.window[1], g_e.window[1])),
        min(g_c.n_points, g_e.n_points),
        "%s-%s" % (g_c.name or "C", g_e.name or "E"),
    )


# transforms applied to the bundled component names
SERIES_TRANSFORMS = {"air": "negate_growth", "climate": "remaining_budget"}


def read_series(path, transforms=None, cap=CLIMATE_CAP):
    """Load ``name,year,value`` rows into :class:`TimeSeries` objects keyed by name."""
    transforms = SERIES_TRANSFORMS if transforms is None else transforms
    rows = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for col in ("name", "year", "value"):
            if col not in (reader.fieldnames or []):
                raise GrowthError("%s: missing column %r" % (path, col))
        for r in reader:
            rows.setdefault(r["name"], []).append((int(r["year"]), float(r["value"]), r.get("units", "")))
    out = {}
    for name, pts in rows.items():
        pts.sort()
        out[name] = TimeSeries(name, [p[0] for p in pts], [p[1] for p in pts],
                               pts[0][2] or "", transforms.get(name, "identity"), cap)
    return out


def bundled_series_path():
    return Path(__file__).with_name("data") / "growth_series.csv"


def growth_table(series, window=DEFAULT_WINDOW, gdp="gdp"):
    """Component, category and GDP growth rates plus the category gaps.

    Returns a dict with ``rows`` (indicator, g, se) in display order and
    ``notes``; a note is added when the component carrying the largest SE
    differs from climate, since the category SE rule is applied numerically.
    """
    est = {name: fit_exponential_growth(s, window) for name, s in series.items()}
    rows = [est[c] for c in COMPONENTS if c in est]
    categories = {cat: aggregate_category(m, est, cat) for cat, m in CATEGORIES.items()
                  if all(x in est for x in m)}
    notes = []
    for cat in ("regulating", "aggregate"):
        if cat in categories and categories[cat].meta["max_se_member"] != "climate":
            notes.append("%s: largest component SE is %s, not climate"
                         % (cat, categories[cat].meta["max_se_member"]))
    gaps = {}
    if gdp in est:
        gaps = {cat: growth_gap(est[gdp], c) for cat, c in categories.items()}
        gaps["forest"] = growth_gap(est[gdp], est["forest"]) if "forest" in est else None
    return {"components": est, "categories": categories, "gaps": gaps,
            "gdp": est.get(gdp), "rows": rows + list(categories.values())
            + ([est[gdp]] if gdp in est else []), "notes": notes}
