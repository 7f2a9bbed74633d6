"""Specification curves, subgroup fits and observation-dropping sensitivity runs."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset import (
    CULTURAL_TAGS, REGULATING_TAGS, Dataset, ServiceTag, bracket_multiplier_grid, prepare,
)
from .design import (
    KNOWN_COVARIATES, DesignEncoder, DesignError, DesignMatrix, ModelSpec, build_design,
    drop_dependent, parse_filter, response_vector, sample_weights,
)
from .estimators import fit_design

logger = logging.getLogger(__name__)


class ConfigurationError(ValueError):
    pass


class CurveError(RuntimeError):
    pass


@dataclass(frozen=True)
class Toggle:
    """A switchable block of covariates; ``es_group`` flips the service indicators."""

    name: str
    covariates: tuple = ()
    es_group: bool = False


DEFAULT_TOGGLES = (
    Toggle("study_year", ("study_year",)),
    Toggle("ln_sample_size", ("ln_sample_size",)),
    Toggle("elicitation", ("elicitation",)),
    Toggle("payment_vehicle", ("payment_vehicle",)),
    Toggle("income_measure", ("income_basis", "income_unit")),
    Toggle("payment_terms", ("payment_terms",)),
    Toggle("es_group", es_group=True),
    Toggle("service_count", ("service_count",)),
    Toggle("spatial_scale", ("spatial_scale",)),
    Toggle("respondent_age", ("respondent_age",)),
    Toggle("household_size", ("household_size",)),
    Toggle("survey_format", ("survey_format",)),
    Toggle("continent", ("continent",)),
    Toggle("period", ("period",)),
    Toggle("forest", ("forest",)),
)
# the main specification switches on the first nine toggles
MAIN_TOGGLE_COUNT = 9


@dataclass(frozen=True)
class SpecUniverse:
    toggles: tuple = DEFAULT_TOGGLES
    base: ModelSpec = field(default_factory=lambda: ModelSpec(covariates=(),
                                                              es_group_included=False))

    def __post_init__(self):
        object.__setattr__(self, "toggles", tuple(self.toggles))
        names = [t.name for t in self.toggles]
        dup = sorted({n for n in names if names.count(n) > 1})
        if dup:
            raise ConfigurationError("duplicate toggle name(s): %s" % ", ".join(dup))
        covs = [c for t in self.toggles for c in t.covariates]
        if len(set(covs)) != len(covs):
            raise ConfigurationError("a covariate appears in more than one toggle")

    def spec_for(self, bits):
        """Spec with the toggles whose bit is ``"1"`` switched on (first toggle = first bit)."""
        if len(bits) != len(self.toggles):
            raise ConfigurationError("expected %d bits, got %r" % (len(self.toggles), bits))
        covs = list(self.base.covariates)
        es = self.base.es_group_included
        for bit, t in zip(bits, self.toggles):
            if bit == "1":
                covs += [c for c in t.covariates if c not in covs]
                es = es or t.es_group
        return self.base.replace(covariates=tuple(covs), es_group_included=es)

    def main_bits(self, count=MAIN_TOGGLE_COUNT):
        return "1" * count + "0" * (len(self.toggles) - count)


def enumerate_specs(universe):
    """All ``2**len(toggles)`` specs as ``(bits, spec)`` in binary counting order."""
    k = len(universe.toggles)
    out = []
    for i in range(2 ** k):
        bits = format(i, "0%db" % k) if k else ""
        out.append((bits, universe.spec_for(bits)))
    return out


# --------------------------------------------------------------------------
# specification curve

@dataclass(frozen=True)
class CurveEntry:
    fingerprint: str
    bits: str
    estimate: float
    ci_low: float
    ci_high: float
    converged: bool
    n_obs: int


@dataclass
class SpecCurve:
    entries: list
    main_fingerprint: str
    main_percentile: float
    failures: int

    COLUMNS = ("fingerprint", "bits", "estimate", "ci_low", "ci_high", "converged", "n_obs")

    def __len__(self):
        return len(self.entries)

    @property
    def main_entry(self):
        return next(e for e in self.entries if e.fingerprint == self.main_fingerprint)

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for e in self.entries:
            w.writerow([e.fingerprint, e.bits, repr(e.estimate), repr(e.ci_low), repr(e.ci_high),
                        "true" if e.converged else "false", e.n_obs])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text

    def report(self):
        ok = [e.estimate for e in self.entries if e.converged]
        return {
            "specs": len(self.entries), "converged": len(ok), "failures": self.failures,
            "main_fingerprint": self.main_fingerprint, "main_percentile": self.main_percentile,
            "main_estimate": self.main_entry.estimate,
            "min": min(ok), "max": max(ok), "median": float(np.median(ok)),
        }


def _full_design(ds, universe_specs):
    """Design with every covariate any spec uses, in the column order build_design gives."""
    covs = []
    for s in universe_specs:
        covs += [c for c in s.covariates if c not in covs]
    order = {c: i for i, c in enumerate(KNOWN_COVARIATES)}
    ref = universe_specs[0]
    es = any(s.es_group_included for s in universe_specs)
    # covariate order across specs only affects column order, not estimates
    full_spec = ref.replace(covariates=tuple(sorted(covs, key=order.get)), es_group_included=es)
    sub = ds.subset(_filter(ref))
    frame = sub.to_frame()
    enc = DesignEncoder(full_spec.covariates, es, full_spec.country_indicators).fit(frame)
    X = np.column_stack([np.ones(len(frame)), enc.transform(frame)])
    names = ["const"] + list(enc.feature_names_out_)
    y, negative = response_vector(frame, ref.negative_policy)
    if ref.negative_policy == "floor_substitute" and negative.any():
        X = np.column_stack([X, negative.astype(float)])
        names.append("negative_wtp")
    return DesignMatrix(y, X, names, sample_weights(frame["sample_size"].to_numpy(),
                                                    ref.weight_scheme),
                        frame["study_id"].to_numpy(), frame["row_id"].to_numpy(),
                        reference_levels=dict(enc.reference_levels_)), enc


def _filter(spec):
    return parse_filter(spec.subset_filter)


def _columns_for(spec, names):
    """Columns of the full design that ``spec`` uses."""
    wanted = []
    for n in names:
        if n in ("const", "ln_income", "negative_wtp"):
            wanted.append(n)
            continue
        base = n.split("[", 1)[0]
        if base == "es":
            if spec.es_group_included:
                wanted.append(n)
        elif base == "country":
            if spec.country_indicators:
                wanted.append(n)
        elif base in spec.covariates:
            wanted.append(n)
    return wanted


def _fit_from_full(full, spec):
    d = full.select_columns(_columns_for(spec, full.column_names))
    rows = np.flatnonzero(np.all(np.isfinite(d.regressors), axis=1))
    if rows.size < d.n_obs:
        d = d.take(rows)
    if len(set(d.cluster_ids.tolist())) < 2:
        raise DesignError("fewer than 2 studies")
    d = drop_dependent(d, warn=False)
    return fit_design(d, spec.estimator)


def _entry(bits, spec, res):
    fp = spec.fingerprint()
    if res is None:
        return CurveEntry(fp, bits, math.nan, math.nan, math.nan, False, 0)
    lo, hi = res.conf_int()
    return CurveEntry(fp, bits, res.xi, lo, hi, True, res.n_obs)


_WORKER_STATE = {}


def _run_chunk(chunk):
    full = _WORKER_STATE.get("full")
    ds = _WORKER_STATE.get("ds")
    out = []
    for bits, spec in chunk:
        try:
            if full is not None:
                res = _fit_from_full(full, spec)
            else:
                res = fit_design(build_design(ds, spec, warn=False), spec.estimator)
            if not np.isfinite(res.xi):
                res = None
        except (ValueError, np.linalg.LinAlgError, KeyError) as exc:
            logger.debug("spec %s failed: %s", bits, exc)
            res = None
        out.append(_entry(bits, spec, res))
    return out


def run_spec_curve(ds, specs, main, workers=1, chunksize=None):
    """Fit every spec and return the sorted curve.

    ``specs`` is a list of ``(bits, ModelSpec)`` pairs (or bare specs) and
    must contain ``main``. When all specs share estimator, weights and
    subset, the encoded design is built once and each spec selects its
    columns from it, which is equivalent to building each design from
    scratch apart from reference categories being learned on the full
    subset. Output is independent of ``workers``.
    """
    specs = [s if isinstance(s, tuple) else ("", s) for s in specs]
    if not specs:
        raise CurveError("no specifications to run")
    main_fp = main.fingerprint()
    if not any(s.fingerprint() == main_fp for _, s in specs):
        raise CurveError("main specification not among the specs")
    plain = [s for _, s in specs]
    shared = {(s.estimator, s.weight_scheme, s.subset_filter, s.negative_policy,
               s.country_indicators) for s in plain}
    _WORKER_STATE.clear()
    _WORKER_STATE["ds"] = ds
    if len(shared) == 1:
        try:
            _WORKER_STATE["full"], _ = _full_design(ds, plain)
        except (ValueError, KeyError) as exc:
            logger.info("shared design unavailable (%s); building per spec", exc)
    chunksize = chunksize or max(1, min(256, len(specs) // (8 * max(workers, 1)) or 1))
    chunks = [specs[i:i + chunksize] for i in range(0, len(specs), chunksize)]
    try:
        if workers > 1:
            with ProcessPoolExecutor(workers, mp_context=mp.get_context("fork")) as pool:
                parts = list(pool.map(_run_chunk, chunks))
        else:
            parts = [_run_chunk(c) for c in chunks]
    finally:
        _WORKER_STATE.clear()
    entries = [e for part in parts for e in part]
    ok = sorted((e for e in entries if e.converged), key=lambda e: (e.estimate, e.fingerprint))
    bad = sorted((e for e in entries if not e.converged), key=lambda e: e.fingerprint)
    if not ok:
        raise CurveError("every specification failed to fit")
    ranks = [i for i, e in enumerate(ok) if e.fingerprint == main_fp]
    # rank counts the main spec itself, so a lone spec sits at percentile 1
    pct = (ranks[0] + 1) / len(ok) if ranks else math.nan
    return SpecCurve(ok + bad, main_fp, pct, len(bad))


# --------------------------------------------------------------------------
# subgroups

PARTITIONS = ("service_type", "continent", "period_2011", "income_median", "income_quartiles")


class SubgroupFits(list):
    """Fit results, one per cell, with ``skipped`` listing ``(cell, reason)``."""

    def __init__(self, items=(), skipped=()):
        super().__init__(items)
        self.skipped = list(skipped)

    def by_cell(self):
        return {r.meta["cell"]: r for r in self}


def _cells(ds, partition):
    obs = ds.observations
    if partition == "service_type":
        cells = [("regulating", lambda o: bool(o.service_tags & set(REGULATING_TAGS))),
                 ("cultural", lambda o: bool(o.service_tags & set(CULTURAL_TAGS)))]
        for tag in ServiceTag:
            cells.append((tag.value, lambda o, t=tag: t in o.service_tags))
        return cells
    if partition == "continent":
        present = sorted({o.continent.value for o in obs})
        return [(c, lambda o, c=c: o.continent.value == c) for c in present]
    if partition == "period_2011":
        # imputed study years are too coarse to place around the split
        return [("before_2011", lambda o: not o.study_year_imputed and o.study_year < 2011),
                ("from_2011", lambda o: not o.study_year_imputed and o.study_year >= 2011)]
    incomes = np.array([o.income_value for o in obs], dtype=float)
    if partition == "income_median":
        med = float(np.median(incomes))
        return [("below_median", lambda o: o.income_value < med),
                ("above_median", lambda o: o.income_value >= med)]
    if partition == "income_quartiles":
        q1, q2, q3 = (float(q) for q in np.quantile(incomes, [0.25, 0.5, 0.75]))
        edges = [-math.inf, q1, q2, q3, math.inf]
        return [("Q%d" % (i + 1), lambda o, a=edges[i], b=edges[i + 1]: a <= o.income_value < b
                 if b != math.inf else a <= o.income_value)
                for i in range(4)]
    raise ValueError("unknown partition %r; expected one of %s" % (partition, PARTITIONS))


def subgroup_fit(ds, partition, spec=None):
    """Refit ``spec`` on each cell of ``partition``.

    Service-type cells overlap: an observation tagged with several services
    lands in each matching cell. Cells with fewer than two studies, or whose
    fit fails, are skipped and reported.
    """
    spec = ModelSpec() if spec is None else spec
    fits, skipped = [], []
    for label, keep in _cells(ds, partition):
        sub = ds.subset(keep)
        n_studies = len({o.study_id for o in sub})
        if n_studies < 2:
            skipped.append((label, "%d studies in cell" % n_studies))
            continue
        try:
            res = fit_design(build_design(sub, spec, warn=False), spec.estimator)
        except (ValueError, np.linalg.LinAlgError) as exc:
            skipped.append((label, str(exc)))
            continue
        res.meta["cell"] = label
        res.meta["partition"] = partition
        fits.append(res)
    for label, why in skipped:
        logger.info("subgroup %s skipped: %s", label, why)
    return SubgroupFits(fits, skipped)


# --------------------------------------------------------------------------
# observation dropping

DEFAULT_FRACTIONS = tuple(round(0.01 * i, 2) for i in range(1, 91))


@dataclass
class SweepResult:
    rows: list
    notice: str = None

    def estimates(self):
        return [(f, r.xi) for f, r in self.rows]


def _income_order(d, ds):
    income = {o.row_id: o.income_value for o in ds.observations}
    keys = [(income[r], r) for r in d.row_ids.tolist()]
    return sorted(range(len(keys)), key=keys.__getitem__)


def _refit(d, rows, estimator):
    sub = d.take(np.sort(np.asarray(rows, dtype=int)))
    if len(set(sub.cluster_ids.tolist())) < 2:
        raise DesignError("fewer than 2 studies remain")
    return fit_design(drop_dependent(sub, warn=False), estimator)


def drop_extremes(ds, tail="top", fractions=DEFAULT_FRACTIONS, spec=None):
    """Refit after removing the highest (``top``) or lowest income share.

    At fraction ``f`` the ``floor(f * N)`` rows at that end of the
    income ranking are removed (ties broken by row id). Indicator columns
    and reference levels stay as learned on the full sample. The sweep stops
    with a notice at the first fraction that cannot be fitted.
    """
    if tail not in ("top", "bottom"):
        raise ValueError("tail must be 'top' or 'bottom'")
    fractions = list(fractions)
    if any(b < a for a, b in zip(fractions, fractions[1:])):
        raise ValueError("fractions must be ascending")
    spec = ModelSpec() if spec is None else spec
    d = build_design(ds, spec, warn=False)
    order = _income_order(d, ds)
    n = d.n_obs
    rows, notice = [], None
    for f in fractions:
        k = int(math.floor(f * n + 1e-9))
        keep = order[:n - k] if tail == "top" else order[k:]
        try:
            res = _refit(d, keep, spec.estimator)
        except (ValueError, np.linalg.LinAlgError) as exc:
            notice = "sweep truncated at fraction %.2f: %s" % (f, exc)
            logger.warning(notice)
            break
        res.meta["dropped_rows"] = sorted(set(d.row_ids.tolist())
                                          - set(d.row_ids[np.asarray(keep, dtype=int)].tolist()))
        rows.append((f, res))
    return SweepResult(rows, notice)


def dropped_rows(ds, tail, fraction, spec=None):
    """Row ids ``drop_extremes`` removes at ``fraction``, and the ones it keeps."""
    spec = ModelSpec() if spec is None else spec
    d = build_design(ds, spec, warn=False)
    order = _income_order(d, ds)
    n = d.n_obs
    k = int(math.floor(fraction * n + 1e-9))
    idx = order[n - k:] if tail == "top" else order[:k]
    gone = sorted(d.row_ids[np.asarray(idx, dtype=int)].tolist()) if k else []
    kept = sorted(set(d.row_ids.tolist()) - set(gone))
    return gone, kept


def draw_seed(seed, fraction_index, draw):
    return np.random.SeedSequence(seed, spawn_key=(fraction_index, draw))


def drop_random(ds, fractions=DEFAULT_FRACTIONS, draws=25, seed=0, spec=None):
    """Refit on random subsamples; one summary row per fraction.

    Draw ``j`` at fraction index ``i`` uses its own generator seeded from
    ``(seed, i, j)``. Each row holds ``fraction, n_ok, mean, sd, min, max``.
    """
    if draws < 1:
        raise ValueError("draws must be >= 1")
    spec = ModelSpec() if spec is None else spec
    d = build_design(ds, spec, warn=False)
    n = d.n_obs
    grid = []
    for i, f in enumerate(fractions):
        k = int(math.floor(f * n + 1e-9))
        est = []
        for j in range(draws):
            rng = np.random.default_rng(draw_seed(seed, i, j))
            drop = rng.choice(n, size=k, replace=False) if k else np.array([], dtype=int)
            keep = np.setdiff1d(np.arange(n), drop)
            try:
                est.append(_refit(d, keep, spec.estimator).xi)
            except (ValueError, np.linalg.LinAlgError):
                continue
        est = np.asarray(est)
        grid.append({
            "fraction": float(f), "n_ok": int(est.size),
            "mean": float(est.mean()) if est.size else math.nan,
            "sd": float(est.std(ddof=1)) if est.size > 1 else 0.0 if est.size else math.nan,
            "min": float(est.min()) if est.size else math.nan,
            "max": float(est.max()) if est.size else math.nan,
        })
    return grid


# --------------------------------------------------------------------------
# weights, estimators and bracket multipliers

def alternatives(ds, spec=None, estimators=("ols", "fixed_effects", "random_effects"),
                 weight_schemes=("none", "sqrt_n", "n", "inv_n", "inv_sqrt_n")):
    """Elasticity under every estimator and weight scheme combination."""
    spec = ModelSpec() if spec is None else spec
    rows = []
    for est in estimators:
        for scheme in weight_schemes:
            s = spec.replace(estimator=est, weight_scheme=scheme)
            try:
                res = fit_design(build_design(ds, s, warn=False), est)
                lo, hi = res.conf_int()
                rows.append({"estimator": est, "weight_scheme": scheme, "estimate": res.xi,
                             "se": res.xi_se, "ci_low": lo, "ci_high": hi, "n_obs": res.n_obs,
                             "error": None})
            except (ValueError, np.linalg.LinAlgError) as exc:
                rows.append({"estimator": est, "weight_scheme": scheme, "estimate": math.nan,
                             "se": math.nan, "ci_low": math.nan, "ci_high": math.nan,
                             "n_obs": 0, "error": str(exc)})
    return rows


def bracket_sensitivity(raw, spec=None, grid=None, tables=None, reference=None):
    """Elasticity for each open-bracket multiplier pair.

    ``raw`` is an unprepared dataset containing bracket incomes. Returns
    ``(rows, max_relative_change)`` where the change is measured against the
    default multipliers (or ``reference``).
    """
    spec = ModelSpec() if spec is None else spec
    grid = bracket_multiplier_grid() if grid is None else grid

    def xi_for(lo, hi):
        prepared = prepare(raw, tables, low_mult=lo, high_mult=hi)
        return fit_design(build_design(prepared, spec, warn=False), spec.estimator).xi

    base = xi_for(*(reference or (0.75, 1.5)))
    rows = []
    for lo, hi in grid:
        xi = xi_for(lo, hi)
        rows.append({"low_mult": lo, "high_mult": hi, "estimate": xi,
                     "relative_change": abs(xi - base) / abs(base)})
    return rows, max(r["relative_change"] for r in rows)


def sweep_rows(sweep, tail):
    out = []
    for f, res in sweep.rows:
        lo, hi = res.conf_int()
        out.append({"tail": tail, "fraction": f, "estimate": res.xi, "ci_low": lo,
                    "ci_high": hi, "n_obs": res.n_obs})
    return out


def to_json(obj):
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True)
