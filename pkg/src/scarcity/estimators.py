"""Weighted pooled, fixed-effects and random-effects estimators with study clustering.

All fits take a :class:`~scarcity.design.DesignMatrix` and return a
:class:`FitResult`. Observation weights enter as ``sum(w * e**2)`` in the
least-squares criterion. The default covariance is the cluster-robust
sandwich

    V = c * B^-1 M B^-1,   B = X'WX,   M = sum_g (X_g' W_g e_g)(X_g' W_g e_g)'

with ``c = G/(G-1) * (N-1)/(N-k)``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse, stats
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ._validation import check_groups, check_weights, factorize
from .design import DesignError, DesignMatrix, build_design, drop_dependent, independent_columns

COV_TYPES = ("cluster", "robust", "unadjusted")
XI_NAME = "ln_income"


class SingularDesignError(DesignError):
    pass


class HausmanWarning(UserWarning):
    pass


@dataclass
class FitResult:
    """Coefficients and covariance from one fit.

    ``variance_components`` is ``(sigma2_u, sigma2_e)``; ``sigma2_u`` is
    ``None`` for pooled and fixed-effects fits.
    """

    names: list
    coefficients: np.ndarray
    covariance: np.ndarray
    n_obs: int
    n_clusters: int
    r_squared_overall: float
    estimator: str
    cov_type: str = "cluster"
    df_resid: int = None
    variance_components: tuple = (None, None)
    flags: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def standard_errors(self):
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    def coef(self, name=XI_NAME):
        return float(self.coefficients[self.names.index(name)])

    def se(self, name=XI_NAME):
        return float(self.standard_errors[self.names.index(name)])

    @property
    def xi(self):
        return self.coef(XI_NAME)

    @property
    def xi_se(self):
        return self.se(XI_NAME)

    def _dist(self):
        return stats.t(self.df_resid) if self.df_resid else stats.norm()

    def conf_int(self, name=XI_NAME, level=0.95):
        q = self._dist().ppf(0.5 + level / 2)
        b, s = self.coef(name), self.se(name)
        return b - q * s, b + q * s

    def table(self):
        """Rows of ``(name, estimate, se, t, p)``."""
        dist = self._dist()
        rows = []
        for name, b, s in zip(self.names, self.coefficients, self.standard_errors):
            t = b / s if s > 0 else float("nan")
            p = 2 * dist.sf(abs(t)) if s > 0 else float("nan")
            rows.append((name, float(b), float(s), float(t), float(p)))
        return rows

    def to_dict(self):
        sigma_u, sigma_e = self.variance_components
        return {
            "estimator": self.estimator,
            "cov_type": self.cov_type,
            "coefficients": [
                {"name": n, "estimate": b, "se": s, "t": t, "p": p}
                for n, b, s, t, p in self.table()
            ],
            "variance_components": {"sigma2_u": sigma_u, "sigma2_e": sigma_e},
            "n_obs": self.n_obs,
            "n_clusters": self.n_clusters,
            "r_squared_overall": self.r_squared_overall,
            "df_resid": self.df_resid,
            "flags": list(self.flags),
            "meta": _jsonable(self.meta),
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), sort_keys=True, allow_nan=True, **kwargs)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _cluster_matrix(codes, n_groups):
    n = codes.shape[0]
    return sparse.csr_matrix((np.ones(n), (codes, np.arange(n))), shape=(n_groups, n))


def _solve_wls(X, y, w, names):
    sw = np.sqrt(w)
    Xw = X * sw[:, None]
    beta, _, rank, _ = np.linalg.lstsq(Xw, y * sw, rcond=None)
    if rank < X.shape[1]:
        _, dropped = independent_columns(X, w)
        bad = [names[j] for j, _ in dropped] or names
        raise SingularDesignError("singular design; dependent column(s): %s" % ", ".join(bad))
    gram = Xw.T @ Xw
    bread = np.linalg.inv(gram)
    bread = 0.5 * (bread + bread.T)
    return beta, bread


def _sandwich(X, resid, w, bread, codes, n_groups, n_obs, k, cov_type, sigma2=None):
    if cov_type == "unadjusted":
        if sigma2 is None:
            sigma2 = float(np.sum(w * resid ** 2) / (n_obs - k))
        return sigma2 * bread
    scores = X * (w * resid)[:, None]
    if cov_type == "robust":
        meat = scores.T @ scores
        factor = n_obs / (n_obs - k)
    elif cov_type == "cluster":
        if n_groups < 2:
            raise DesignError("cluster-robust covariance needs at least 2 clusters")
        summed = _cluster_matrix(codes, n_groups) @ scores
        meat = summed.T @ summed
        factor = n_groups / (n_groups - 1) * (n_obs - 1) / (n_obs - k)
    else:
        raise ValueError("cov_type must be one of %s, got %r" % (COV_TYPES, cov_type))
    cov = factor * bread @ meat @ bread
    return 0.5 * (cov + cov.T)


def _df(cov_type, n_groups, n_obs, k):
    if cov_type == "cluster":
        return max(n_groups - 1, 1)
    return max(n_obs - k, 1)


def _r2(fitted, y):
    if np.ptp(y) == 0 or np.ptp(fitted) == 0:
        return float("nan")
    return float(np.corrcoef(fitted, y)[0, 1] ** 2)


def fit_wls(d, cov_type="cluster"):
    """Weighted least squares on the full design (pooled estimator)."""
    codes, n_groups = factorize(d.cluster_ids)
    X, y, w = d.regressors, d.response, d.weights
    n, k = X.shape
    if n <= k:
        raise DesignError("%d observations for %d coefficients" % (n, k))
    beta, bread = _solve_wls(X, y, w, d.column_names)
    fitted = X @ beta
    resid = y - fitted
    cov = _sandwich(X, resid, w, bread, codes, n_groups, n, k, cov_type)
    return FitResult(
        names=list(d.column_names), coefficients=beta, covariance=cov, n_obs=n,
        n_clusters=n_groups, r_squared_overall=_r2(fitted, y), estimator="ols",
        cov_type=cov_type, df_resid=_df(cov_type, n_groups, n, k),
        variance_components=(None, float(np.sum(w * resid ** 2) / np.sum(w))),
        meta={"dropped": list(d.dropped), "reference_levels": dict(d.reference_levels)},
    )


def _group_means(M, values, w, wsum):
    return (M @ (values * (w if values.ndim == 1 else w[:, None]))) / (
        wsum if values.ndim == 1 else wsum[:, None])


def _slope_columns(d):
    return [j for j, n in enumerate(d.column_names) if n != "const"]


def _within(d, codes, n_groups):
    M = _cluster_matrix(codes, n_groups)
    w = d.weights
    wsum = M @ w
    slopes = _slope_columns(d)
    X = d.regressors[:, slopes]
    xbar = _group_means(M, X, w, wsum)
    ybar = _group_means(M, d.response, w, wsum)
    Xt = X - xbar[codes]
    # study-invariant columns leave only rounding noise after demeaning; zero them
    # so rank checks see them as constant
    tiny = np.linalg.norm(Xt, axis=0) <= 1e-10 * np.maximum(np.linalg.norm(X, axis=0), 1e-300)
    Xt[:, tiny] = 0.0
    return Xt, d.response - ybar[codes], xbar, ybar, [d.column_names[j] for j in slopes]


def fit_fixed_effects(d, cov_type="cluster"):
    """Within (study-demeaned) weighted least squares.

    Singleton studies are removed first; regressors that do not vary
    within any study are dropped. The coefficients equal those from a
    weighted regression with one dummy per study.
    """
    codes, n_groups = factorize(d.cluster_ids)
    counts = np.bincount(codes, minlength=n_groups)
    keep = counts[codes] >= 2
    n_singletons = int(np.sum(counts == 1))
    if not keep.any():
        raise DesignError("all studies are singletons; no within-study variance")
    d = d.take(np.flatnonzero(keep))
    codes, n_groups = factorize(d.cluster_ids)
    Xt, yt, xbar, ybar, names = _within(d, codes, n_groups)
    kept, dropped = independent_columns(Xt, d.weights)
    if not kept:
        raise DesignError("no regressor varies within studies")
    Xt = Xt[:, kept]
    dropped_names = [(names[j], "study-invariant" if why == "constant" else why)
                     for j, why in dropped]
    names = [names[j] for j in kept]
    n, k = Xt.shape
    w = d.weights
    if n - n_groups - k <= 0:
        raise DesignError("not enough within-study observations for %d regressors" % k)
    beta, bread = _solve_wls(Xt, yt, w, names)
    resid = yt - Xt @ beta
    sigma2_e = float(np.sum(w * resid ** 2) / (n - n_groups - k) * n / np.sum(w))
    sigma2_raw = float(np.sum(w * resid ** 2) / (n - n_groups - k))
    cov = _sandwich(Xt, resid, w, bread, codes, n_groups, n, k, cov_type, sigma2=sigma2_raw)
    slopes = _slope_columns(d)
    X_raw = d.regressors[:, slopes][:, kept]
    wmean = np.sum(w)
    intercept = float(np.sum(w * d.response) / wmean - (w @ X_raw / wmean) @ beta)
    fitted = intercept + X_raw @ beta
    return FitResult(
        names=names, coefficients=beta, covariance=cov, n_obs=n, n_clusters=n_groups,
        r_squared_overall=_r2(fitted, d.response), estimator="fixed_effects",
        cov_type=cov_type, df_resid=_df(cov_type, n_groups, n, k),
        variance_components=(None, sigma2_e),
        meta={"dropped": list(d.dropped) + dropped_names, "singletons_dropped": n_singletons,
              "intercept": intercept, "reference_levels": dict(d.reference_levels)},
    )


def variance_components(d, codes=None, n_groups=None):
    """Between/within moment estimates ``(sigma2_u, sigma2_e, floored)``.

    ``sigma2_e`` comes from the within regression with ``N - G - k``
    degrees of freedom; the between regression on weighted study means
    gives ``sigma2_b`` on ``G - k_b`` degrees of freedom, and
    ``sigma2_u = sigma2_b - sigma2_e / T_h`` with ``T_h`` the harmonic mean
    study size. Weights are rescaled to mean one and used in both stages.
    """
    if codes is None:
        codes, n_groups = factorize(d.cluster_ids)
    w = d.weights / np.mean(d.weights)
    dn = DesignMatrix(d.response, d.regressors, d.column_names, w, d.cluster_ids, d.row_ids)
    Xt, yt, xbar, ybar, _ = _within(dn, codes, n_groups)
    n = d.n_obs
    if Xt.shape[1]:
        kept_w, _ = independent_columns(Xt, w)
        Xt = Xt[:, kept_w]
    k_w = Xt.shape[1]
    dof_w = n - n_groups - k_w
    if dof_w <= 0:
        raise DesignError("not enough within-study variation to estimate sigma2_e")
    if k_w:
        bw = np.linalg.lstsq(Xt * np.sqrt(w)[:, None], yt * np.sqrt(w), rcond=None)[0]
        ew = yt - Xt @ bw
    else:
        ew = yt
    sigma2_e = float(np.sum(w * ew ** 2) / dof_w)

    M = _cluster_matrix(codes, n_groups)
    counts = np.bincount(codes, minlength=n_groups).astype(float)
    gw = (M @ w) / counts
    Xb = np.column_stack([np.ones(n_groups), xbar]) if xbar.size else np.ones((n_groups, 1))
    kept_b, _ = independent_columns(Xb, gw)
    Xb = Xb[:, kept_b]
    dof_b = n_groups - Xb.shape[1]
    if dof_b <= 0:
        raise DesignError("not enough studies to estimate the between variance")
    sg = np.sqrt(gw)
    bb = np.linalg.lstsq(Xb * sg[:, None], ybar * sg, rcond=None)[0]
    eb = ybar - Xb @ bb
    sigma2_b = float(np.sum(gw * eb ** 2) / dof_b)
    t_harm = n_groups / np.sum(1.0 / counts)
    sigma2_u = sigma2_b - sigma2_e / t_harm
    floored = sigma2_u < 0
    return max(sigma2_u, 0.0), sigma2_e, floored


def fit_random_effects(d, cov_type="cluster", theta=None):
    """Random-effects GLS by quasi-demeaning.

    Each study's data are shifted by ``theta_g`` times the weighted study
    mean, ``theta_g = 1 - sqrt(s2e / (T_g s2u + s2e))``, and the transformed
    data are fit by weighted least squares. Passing ``theta`` (scalar or one
    value per study in order of first appearance) skips the variance
    component step.
    """
    codes, n_groups = factorize(d.cluster_ids)
    if n_groups < 2:
        raise DesignError("random effects need at least 2 studies")
    counts = np.bincount(codes, minlength=n_groups).astype(float)
    flags = []
    if theta is None:
        sigma2_u, sigma2_e, floored = variance_components(d, codes, n_groups)
        if floored:
            flags.append("sigma2_u_floored")
        denom = counts * sigma2_u + sigma2_e
        # both components zero (noiseless data): fall back to pooling
        theta_g = np.where(denom > 0, 1.0 - np.sqrt(sigma2_e / np.where(denom > 0, denom, 1.0)),
                           0.0)
    else:
        sigma2_u = sigma2_e = None
        theta_g = np.broadcast_to(np.asarray(theta, dtype=float), (n_groups,)).copy()
        flags.append("theta_fixed")
    w = d.weights / np.mean(d.weights)
    M = _cluster_matrix(codes, n_groups)
    wsum = M @ w
    xbar = _group_means(M, d.regressors, w, wsum)
    ybar = _group_means(M, d.response, w, wsum)
    th = theta_g[codes]
    Xs = d.regressors - th[:, None] * xbar[codes]
    ys = d.response - th * ybar[codes]
    kept, dropped = independent_columns(Xs, w)
    Xs = Xs[:, kept]
    names = [d.column_names[j] for j in kept]
    n, k = Xs.shape
    if n <= k:
        raise DesignError("%d observations for %d coefficients" % (n, k))
    beta, bread = _solve_wls(Xs, ys, w, names)
    resid = ys - Xs @ beta
    cov = _sandwich(Xs, resid, w, bread, codes, n_groups, n, k, cov_type, sigma2=sigma2_e)
    fitted = d.regressors[:, kept] @ beta
    return FitResult(
        names=names, coefficients=beta, covariance=cov, n_obs=n, n_clusters=n_groups,
        r_squared_overall=_r2(fitted, d.response), estimator="random_effects",
        cov_type=cov_type, df_resid=_df(cov_type, n_groups, n, k),
        variance_components=(sigma2_u, sigma2_e), flags=flags,
        meta={"theta": theta_g, "dropped": list(d.dropped)
              + [(d.column_names[j], why) for j, why in dropped],
              "reference_levels": dict(d.reference_levels)},
    )


FITTERS = {
    "ols": fit_wls,
    "fixed_effects": fit_fixed_effects,
    "random_effects": fit_random_effects,
}


def fit_design(d, estimator, cov_type="cluster"):
    try:
        fitter = FITTERS[estimator]
    except KeyError:
        raise ValueError("unknown estimator %r" % estimator) from None
    return fitter(d, cov_type=cov_type)


def fit_spec(ds, spec, cov_type="cluster", warn=True):
    """Build the design for ``spec`` and fit it; the spec fingerprint lands in ``meta``."""
    res = fit_design(build_design(ds, spec, warn=warn), spec.estimator, cov_type)
    res.meta["spec_fingerprint"] = spec.fingerprint()
    res.meta["weight_scheme"] = spec.weight_scheme
    return res


def drop_singletons(d):
    """Rows of ``d`` belonging to studies with at least two observations."""
    codes, n_groups = factorize(d.cluster_ids)
    counts = np.bincount(codes, minlength=n_groups)
    return d.take(np.flatnonzero(counts[codes] >= 2))


@dataclass(frozen=True)
class HausmanResult:
    statistic: float
    dof: int
    p_value: float
    names: tuple = ()
    pinv_used: bool = False

    def __iter__(self):
        return iter((self.statistic, self.dof, self.p_value))


def hausman_test(fe, re):
    """Contrast fixed- and random-effects coefficients on their shared slopes."""
    shared = [n for n in fe.names if n in re.names and n != "const"]
    if not shared:
        raise DesignError("no coefficients shared by the two fits; test undefined")
    i_fe = [fe.names.index(n) for n in shared]
    i_re = [re.names.index(n) for n in shared]
    diff = fe.coefficients[i_fe] - re.coefficients[i_re]
    vdiff = fe.covariance[np.ix_(i_fe, i_fe)] - re.covariance[np.ix_(i_re, i_re)]
    vdiff = 0.5 * (vdiff + vdiff.T)
    pinv_used = False
    try:
        chol = np.linalg.cholesky(vdiff)
        z = np.linalg.solve(chol, diff)
        stat = float(z @ z)
    except np.linalg.LinAlgError:
        pinv_used = True
        warnings.warn("covariance difference not positive definite; using pseudo-inverse",
                      HausmanWarning, stacklevel=2)
        stat = float(diff @ np.linalg.pinv(vdiff) @ diff)
    stat = max(stat, 0.0)
    dof = len(shared)
    return HausmanResult(stat, dof, float(stats.chi2.sf(stat, dof)), tuple(shared), pinv_used)


def hausman_on_design(d, cov_type="unadjusted"):
    """Fixed versus random effects on the non-singleton studies of ``d``.

    The classical test needs the efficient (model-based) random-effects
    covariance, hence the ``unadjusted`` default; robust covariances often
    make ``V_FE - V_RE`` indefinite.
    """
    d = drop_dependent(drop_singletons(d), warn=False)
    fe = fit_fixed_effects(d, cov_type)
    re = fit_random_effects(d, cov_type)
    return hausman_test(fe, re), fe, re


# --------------------------------------------------------------------------
# scikit-learn style wrappers

class _PanelRegressor(RegressorMixin, BaseEstimator):

    def _fit_design(self, design):
        raise NotImplementedError

    def fit(self, X, y, groups=None, sample_weight=None):
        """Fit on features ``X`` (no intercept column) clustered by ``groups``.

        Parameters
        ----------
        X : array-like of shape (n_samples, n_features)
        y : array-like of shape (n_samples,)
        groups : array-like of shape (n_samples,), optional
            Study identifiers; each row is its own cluster when omitted.
        sample_weight : array-like of shape (n_samples,), optional
        """
        columns = getattr(X, "columns", None)
        X, y = check_X_y(X, y, y_numeric=True)
        n, p = X.shape
        self.n_features_in_ = p
        names = [str(c) for c in columns] if columns is not None else ["x%d" % i for i in range(p)]
        self.feature_names_ = names
        groups = check_groups(groups, n)
        weights = check_weights(sample_weight, n)
        design = DesignMatrix(y, np.column_stack([np.ones(n), X]), ["const"] + names,
                              weights, groups)
        self.result_ = self._fit_design(design)
        coef = dict(zip(self.result_.names, self.result_.coefficients))
        self.coef_ = np.array([coef.get(nm, 0.0) for nm in names])
        self.intercept_ = coef.get("const", self.result_.meta.get("intercept", 0.0))
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError("X has %d features, expected %d" % (X.shape[1], self.n_features_in_))
        return X @ self.coef_ + self.intercept_


class WLSRegressor(_PanelRegressor):
    """Pooled weighted least squares with cluster-robust standard errors."""

    def __init__(self, cov_type="cluster"):
        self.cov_type = cov_type

    def _fit_design(self, design):
        return fit_wls(design, cov_type=self.cov_type)


class FixedEffectsRegressor(_PanelRegressor):
    """Study fixed effects via the within transformation."""

    def __init__(self, cov_type="cluster"):
        self.cov_type = cov_type

    def _fit_design(self, design):
        return fit_fixed_effects(design, cov_type=self.cov_type)


class RandomEffectsRegressor(_PanelRegressor):
    """Study random effects (between/within moment variance components)."""

    def __init__(self, cov_type="cluster", theta=None):
        self.cov_type = cov_type
        self.theta = theta

    def _fit_design(self, design):
        return fit_random_effects(design, cov_type=self.cov_type, theta=self.theta)
