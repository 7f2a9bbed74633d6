"""Model specifications and design-matrix construction for the log-log meta-regression."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import operator
import re
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .dataset import ES_GROUP_TAGS, Dataset, ServiceTag, transform_wtp

logger = logging.getLogger(__name__)

ESTIMATORS = ("ols", "fixed_effects", "random_effects")
WEIGHT_SCHEMES = ("none", "sqrt_n", "n", "inv_n", "inv_sqrt_n")
COUNTRY_SHARE_THRESHOLD = 0.05
PERIOD_SPLIT_YEAR = 2011

NUMERIC_COVARIATES = {
    "study_year": lambda f: f["study_year"].astype(float) - 2010.0,
    "ln_sample_size": lambda f: np.log(f["sample_size"].astype(float)),
    "service_count": lambda f: f["service_count"].astype(float),
    "respondent_age": lambda f: f["respondent_age"].astype(float),
    "household_size": lambda f: f["household_size"].astype(float),
    "period": lambda f: (f["study_year"].astype(float) >= PERIOD_SPLIT_YEAR).astype(float),
    "forest": lambda f: f["service_tags"].map(lambda t: float(ServiceTag.FOREST in t)),
}
CATEGORICAL_COVARIATES = (
    "elicitation", "survey_format", "payment_vehicle", "income_basis", "income_unit",
    "payment_terms", "spatial_scale", "continent",
)
KNOWN_COVARIATES = tuple(NUMERIC_COVARIATES) + CATEGORICAL_COVARIATES

MAIN_COVARIATES = (
    "study_year", "ln_sample_size", "elicitation", "payment_vehicle", "income_basis",
    "income_unit", "payment_terms", "service_count", "spatial_scale",
)


class DesignError(ValueError):
    """The requested design cannot be built or fitted."""


@dataclass(frozen=True)
class ModelSpec:
    """One regression configuration.

    ``subset_filter`` is a small expression such as ``"continent == asia"``
    or ``"service_tags has climate & study_year < 2011"``; ``"all"`` keeps
    every observation.
    """

    estimator: str = "random_effects"
    weight_scheme: str = "sqrt_n"
    covariates: tuple = MAIN_COVARIATES
    es_group_included: bool = True
    country_indicators: bool = True
    subset_filter: str = "all"
    negative_policy: str = "signed_log"
    cluster_level: str = "study"

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if self.estimator not in ESTIMATORS:
            raise ValueError("estimator must be one of %s, got %r" % (ESTIMATORS, self.estimator))
        if self.weight_scheme not in WEIGHT_SCHEMES:
            raise ValueError("weight_scheme must be one of %s, got %r"
                             % (WEIGHT_SCHEMES, self.weight_scheme))
        unknown = [c for c in self.covariates if c not in KNOWN_COVARIATES]
        if unknown:
            raise ValueError("unknown covariate(s): %s" % ", ".join(unknown))
        if len(set(self.covariates)) != len(self.covariates):
            raise ValueError("duplicate covariates in %r" % (self.covariates,))
        if self.cluster_level != "study":
            raise ValueError("only study-level clustering is supported")

    def fingerprint(self):
        """Stable 16-hex-digit hash of the configuration."""
        payload = json.dumps(asdict(self), sort_keys=True, default=list)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def replace(self, **changes):
        params = asdict(self)
        params.update(changes)
        return ModelSpec(**params)


@dataclass
class DesignMatrix:
    response: np.ndarray
    regressors: np.ndarray
    column_names: list
    weights: np.ndarray
    cluster_ids: np.ndarray
    row_ids: np.ndarray = None
    dropped: list = field(default_factory=list)
    reference_levels: dict = field(default_factory=dict)

    def __post_init__(self):
        self.response = np.asarray(self.response, dtype=float)
        self.regressors = np.asarray(self.regressors, dtype=float)
        if self.regressors.ndim == 1:
            self.regressors = self.regressors[:, None]
        self.weights = np.asarray(self.weights, dtype=float)
        self.cluster_ids = np.asarray(self.cluster_ids)
        n = self.response.shape[0]
        if self.row_ids is None:
            self.row_ids = np.arange(n)
        self.row_ids = np.asarray(self.row_ids)
        lengths = {self.regressors.shape[0], self.weights.shape[0],
                   self.cluster_ids.shape[0], self.row_ids.shape[0], n}
        if len(lengths) != 1:
            raise DesignError("design fields have unequal row counts")
        if self.regressors.shape[1] != len(self.column_names):
            raise DesignError("%d columns but %d names"
                              % (self.regressors.shape[1], len(self.column_names)))
        self.column_names = list(self.column_names)

    @property
    def n_obs(self):
        return self.response.shape[0]

    def take(self, rows):
        rows = np.asarray(rows)
        return DesignMatrix(self.response[rows], self.regressors[rows], self.column_names,
                            self.weights[rows], self.cluster_ids[rows], self.row_ids[rows],
                            list(self.dropped), dict(self.reference_levels))

    def select_columns(self, names):
        idx = [self.column_names.index(n) for n in names]
        return DesignMatrix(self.response, self.regressors[:, idx], list(names), self.weights,
                            self.cluster_ids, self.row_ids, list(self.dropped),
                            dict(self.reference_levels))


def sample_weights(sample_size, scheme):
    n = np.asarray(sample_size, dtype=float)
    if scheme == "none":
        return np.ones_like(n)
    if scheme == "sqrt_n":
        return np.sqrt(n)
    if scheme == "n":
        return n
    if scheme == "inv_n":
        return 1.0 / n
    if scheme == "inv_sqrt_n":
        return 1.0 / np.sqrt(n)
    raise ValueError("unknown weight scheme %r" % scheme)


def _modal_level(values):
    counts = pd.Series(values).value_counts(sort=False)
    top = counts.max()
    # ties resolve to the alphabetically first level
    return sorted(counts.index[counts == top])[0]


class DesignEncoder(TransformerMixin, BaseEstimator):
    """Encode observation frames into the regressor matrix.

    Output columns start with ``ln_income``; categorical covariates become
    indicators against their modal level, numeric covariates pass through
    (``NaN`` where missing), and countries holding at least
    ``country_threshold`` of the fitted rows get their own indicator.

    Parameters
    ----------
    covariates : tuple of str
        Covariate names, see ``KNOWN_COVARIATES``.
    es_group : bool
        Add indicators for the regulating and cultural service tags.
    country_indicators : bool
    country_threshold : float
    """

    def __init__(self, covariates=MAIN_COVARIATES, es_group=True, country_indicators=True,
                 country_threshold=COUNTRY_SHARE_THRESHOLD):
        self.covariates = covariates
        self.es_group = es_group
        self.country_indicators = country_indicators
        self.country_threshold = country_threshold

    def fit(self, X, y=None):
        frame = _as_frame(X)
        self.reference_levels_ = {}
        self.levels_ = {}
        for name in self.covariates:
            if name in CATEGORICAL_COVARIATES:
                ref = _modal_level(frame[name])
                self.reference_levels_[name] = ref
                self.levels_[name] = sorted(set(frame[name]) - {ref})
            elif name not in NUMERIC_COVARIATES:
                raise ValueError("unknown covariate %r" % name)
        self.countries_ = []
        if self.country_indicators:
            share = frame["country"].value_counts(normalize=True)
            # the modal country is the reference, as for the categoricals
            ref = _modal_level(frame["country"])
            self.reference_levels_["country"] = ref
            self.countries_ = sorted(set(share.index[share >= self.country_threshold - 1e-12])
                                     - {ref})
        self.feature_names_out_ = self._names()
        return self

    def _names(self):
        names = ["ln_income"]
        for name in self.covariates:
            if name in CATEGORICAL_COVARIATES:
                names += ["%s[%s]" % (name, lvl) for lvl in self.levels_[name]]
            else:
                names.append(name)
        if self.es_group:
            names += ["es[%s]" % t.value for t in ES_GROUP_TAGS]
        names += ["country[%s]" % c for c in self.countries_]
        return names

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "feature_names_out_")
        return np.asarray(self.feature_names_out_, dtype=object)

    def transform(self, X):
        check_is_fitted(self, "feature_names_out_")
        frame = _as_frame(X)
        cols = [np.log(frame["income"].astype(float).to_numpy())]
        for name in self.covariates:
            if name in CATEGORICAL_COVARIATES:
                values = frame[name].to_numpy()
                cols += [(values == lvl).astype(float) for lvl in self.levels_[name]]
            else:
                cols.append(np.asarray(NUMERIC_COVARIATES[name](frame), dtype=float))
        if self.es_group:
            tags = frame["service_tags"]
            cols += [tags.map(lambda s, t=t: float(t in s)).to_numpy(dtype=float)
                     for t in ES_GROUP_TAGS]
        country = frame["country"].to_numpy()
        cols += [(country == c).astype(float) for c in self.countries_]
        return np.column_stack(cols) if cols else np.empty((len(frame), 0))


def _as_frame(X):
    if isinstance(X, Dataset):
        return X.to_frame()
    if isinstance(X, pd.DataFrame):
        return X
    raise TypeError("expected a Dataset or DataFrame, got %s" % type(X).__name__)


def response_vector(frame, policy="signed_log"):
    """``ln(WTP)`` with the chosen negative-WTP treatment and the negativity flags."""
    pairs = [transform_wtp(float(w), policy) for w in frame["wtp"]]
    return np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])


# --------------------------------------------------------------------------
# subset filters

_OPS = {
    "==": operator.eq, "!=": operator.ne, "<": operator.lt, "<=": operator.le,
    ">": operator.gt, ">=": operator.ge,
}
_CLAUSE = re.compile(r"^\s*([a-z_]+)\s*(==|!=|<=|>=|<|>|\bhas\b|\bin\b)\s*(.+?)\s*$")


def _coerce(token):
    token = token.strip()
    if token.lower() in ("true", "false"):
        return token.lower() == "true"
    try:
        return float(token)
    except ValueError:
        return token


def _field(obs, name):
    if name == "income":
        return obs.income_value
    if name == "wtp":
        return obs.wtp.value
    value = getattr(obs, name)
    return value.value if hasattr(value, "value") and not isinstance(value, (int, float)) else value


def parse_filter(expr):
    """Compile a subset expression into a predicate over observations."""
    if expr is None or expr.strip() in ("", "all"):
        return lambda obs: True
    clauses = []
    for part in expr.split("&"):
        m = _CLAUSE.match(part)
        if not m:
            raise DesignError("cannot parse filter clause %r" % part)
        name, op, raw = m.groups()
        clauses.append((name, op, raw))

    def predicate(obs):
        for name, op, raw in clauses:
            if name == "service_tags":
                tags = {t.value for t in obs.service_tags}
                if op == "has":
                    if raw not in tags:
                        return False
                    continue
                raise DesignError("service_tags supports only 'has'")
            value = _field(obs, name)
            if op == "in":
                if str(value) not in {v.strip() for v in raw.split(",")}:
                    return False
                continue
            if op == "has":
                raise DesignError("'has' applies to service_tags only")
            target = _coerce(raw)
            if value is None:
                return False
            if isinstance(target, str):
                value = str(value)
            if not _OPS[op](value, target):
                return False
        return True

    return predicate


# --------------------------------------------------------------------------
# rank handling

def independent_columns(X, weights=None, tol=1e-9):
    """Greedy in-order selection of linearly independent columns.

    Returns ``(kept_indices, dropped)`` where ``dropped`` pairs a column index
    with ``"constant"`` or ``"collinear"``. Column ``j`` is dependent when the
    diagonal entry of the (unpivoted) QR factor is negligible relative to the
    column norm, i.e. it adds nothing to the span of the columns before it.
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    if p == 0:
        return [], []
    Xw = X if weights is None else X * np.sqrt(np.asarray(weights, dtype=float))[:, None]
    norms = np.linalg.norm(Xw, axis=0)
    if n >= p:
        diag = np.abs(np.diag(np.linalg.qr(Xw, mode="r")))
    else:
        diag = np.abs(np.diag(np.linalg.qr(Xw, mode="r"), k=0))
        diag = np.concatenate([diag, np.zeros(p - diag.size)])
    constant = np.ptp(X, axis=0) == 0
    kept, dropped = [], []
    for j in range(p):
        if norms[j] == 0 or diag[j] <= tol * norms[j]:
            dropped.append((j, "constant" if constant[j] else "collinear"))
        else:
            kept.append(j)
    return kept, dropped


def drop_dependent(d, warn=True):
    """Remove constant and collinear columns from a design, recording why."""
    kept, dropped = independent_columns(d.regressors, d.weights)
    if not dropped:
        return d
    records = [(d.column_names[j], why) for j, why in dropped]
    if warn:
        for name, why in records:
            warnings.warn("dropped %s column %r" % (why, name), stacklevel=3)
    out = DesignMatrix(d.response, d.regressors[:, kept], [d.column_names[j] for j in kept],
                       d.weights, d.cluster_ids, d.row_ids, list(d.dropped) + records,
                       dict(d.reference_levels))
    return out


def build_design(ds, spec, warn=True):
    """Design matrix for ``spec`` on ``ds``.

    Applies the subset filter, encodes covariates, drops rows with missing
    covariate values, adds the intercept, attaches weights from the sample
    sizes and removes constant or collinear columns.
    """
    sub = ds.subset(parse_filter(spec.subset_filter))
    if len(sub) == 0:
        raise DesignError("subset %r is empty" % spec.subset_filter)
    if any(o.income_value is None for o in sub):
        raise DesignError("dataset has unimputed bracket incomes; run prepare() first")
    frame = sub.to_frame()
    encoder = DesignEncoder(spec.covariates, spec.es_group_included, spec.country_indicators)
    X = encoder.fit_transform(frame)
    names = ["const"] + list(encoder.feature_names_out_)
    X = np.column_stack([np.ones(len(frame)), X])
    y, negative = response_vector(frame, spec.negative_policy)
    if spec.negative_policy == "floor_substitute" and negative.any():
        X = np.column_stack([X, negative.astype(float)])
        names.append("negative_wtp")
    complete = np.all(np.isfinite(X), axis=1)
    if not complete.all():
        logger.info("dropping %d rows with missing covariates", int((~complete).sum()))
    rows = np.flatnonzero(complete)
    if len(set(frame["study_id"].to_numpy()[rows])) < 2:
        raise DesignError("subset %r leaves fewer than 2 studies" % spec.subset_filter)
    d = DesignMatrix(
        response=y[rows],
        regressors=X[rows],
        column_names=names,
        weights=sample_weights(frame["sample_size"].to_numpy()[rows], spec.weight_scheme),
        cluster_ids=frame["study_id"].to_numpy()[rows],
        row_ids=frame["row_id"].to_numpy()[rows],
        reference_levels=dict(encoder.reference_levels_),
    )
    return drop_dependent(d, warn=warn)
