"""Synthetic contingent-valuation data with a known income elasticity.

The data-generating process is

    ln WTP_ij = alpha + xi * ln INC_ij + sum_k beta_k x_ijk + u_i + e_ij

with ``u_i ~ N(0, study_effect_sd**2)`` and ``e_ij ~ N(0, noise_sd**2)``.
Incomes are log-normal and vary both between and within studies.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import (
    TARGET_YEAR, Continent, Dataset, Elicitation, Frequency, IncomeBasis,
    IncomeBracketTable, IncomeUnit, MonetaryAmount, ObservationRecord, PaymentTerms,
    PaymentVehicle, ServiceTag, SpatialScale, SurveyFormat,
)
from .design import ModelSpec, build_design
from .estimators import fit_design

# (country, continent) pairs sampled for synthetic studies
COUNTRIES = (
    ("USA", Continent.NORTH_AMERICA), ("CAN", Continent.NORTH_AMERICA),
    ("BRA", Continent.SOUTH_AMERICA), ("KEN", Continent.AFRICA),
    ("DEU", Continent.EUROPE), ("GBR", Continent.EUROPE),
    ("CHN", Continent.ASIA), ("IND", Continent.ASIA), ("AUS", Continent.AUSTRALIA),
)
ALL_TAGS = tuple(ServiceTag)


@dataclass(frozen=True)
class GeneratorConfig:
    """Parameters of the synthetic meta-analysis sample.

    Parameters
    ----------
    xi_true : float
        Income elasticity of WTP.
    n_studies : int
    obs_per_study : int or (int, int)
        Fixed count, or an inclusive range drawn uniformly per study.
    study_effect_sd, noise_sd : float
    income_mu, income_sigma : float
        Log-normal income parameters; ``income_within_sd`` is the share of
        log-income variation occurring inside a study.
    covariate_effects : dict
        Coefficients on ``study_year`` (centred at 2010), ``ln_sample_size``,
        ``service_count``, ``respondent_age``, ``household_size``,
        ``period``, ``forest`` or indicators written ``"name[level]"``.
    singleton_fraction : float
        Share of studies reporting one observation.
    xi_post_2011 : float, optional
        Different elasticity for study years from 2011 on.
    size_informative_noise : bool
        Scale the noise SD by ``sqrt(median_n / n)`` so precision grows with
        sample size.
    bracket_fraction : float
        Share of observations whose income is reported as a bracket table.
    """

    xi_true: float = 0.8
    n_studies: int = 50
    obs_per_study: object = 8
    study_effect_sd: float = 0.3
    noise_sd: float = 0.5
    income_mu: float = 10.0
    income_sigma: float = 0.6
    income_within_sd: float = 0.3
    intercept: float = -4.0
    covariate_effects: dict = field(default_factory=dict)
    singleton_fraction: float = 0.0
    sample_size_mu: float = 6.0
    sample_size_sigma: float = 0.8
    xi_post_2011: float = None
    size_informative_noise: bool = False
    bracket_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.obs_per_study, list):
            object.__setattr__(self, "obs_per_study", tuple(self.obs_per_study))
        object.__setattr__(self, "covariate_effects", dict(self.covariate_effects))
        for name in ("study_effect_sd", "noise_sd", "income_sigma", "income_within_sd",
                     "sample_size_sigma"):
            if getattr(self, name) < 0:
                raise ValueError("%s must be >= 0" % name)
        if self.n_studies < 1:
            raise ValueError("n_studies must be >= 1")
        lo, hi = self.obs_range
        if lo < 1 or hi < lo:
            raise ValueError("obs_per_study must be >= 1")
        for name in ("singleton_fraction", "bracket_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError("%s must lie in [0, 1]" % name)

    @property
    def obs_range(self):
        if isinstance(self.obs_per_study, tuple):
            return int(self.obs_per_study[0]), int(self.obs_per_study[1])
        return int(self.obs_per_study), int(self.obs_per_study)

    def replace(self, **changes):
        params = asdict(self)
        params.update(changes)
        return GeneratorConfig(**params)

    def fingerprint(self):
        payload = json.dumps(asdict(self), sort_keys=True, default=list)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def _feature(name, rec):
    """Value of covariate ``name`` for a record dict, mirroring the design encoding."""
    if "[" in name:
        base, level = name[:-1].split("[", 1)
        return float(rec[base] == level)
    if name == "study_year":
        return rec["study_year"] - 2010.0
    if name == "ln_sample_size":
        return math.log(rec["sample_size"])
    if name == "period":
        return float(rec["study_year"] >= 2011)
    if name == "forest":
        return float("forest" in rec["service_tags"])
    return float(rec[name])


def _brackets_around(income, rng):
    """Seven-bracket survey table centred on ``income``; the open ends hold few respondents."""
    cuts = [round(income * f * rng.uniform(0.95, 1.05), 2)
            for f in (0.3, 0.55, 0.8, 1.05, 1.4, 2.0)]
    shares = rng.dirichlet([0.5, 2.0, 3.0, 3.0, 3.0, 2.0, 0.5])
    shares = np.round(shares, 6)
    shares[3] = 1.0 - shares.sum() + shares[3]
    bounds = [None] + cuts + [None]
    return IncomeBracketTable(tuple((bounds[i], bounds[i + 1], float(shares[i]))
                                    for i in range(7)))


def generate(config):
    """Draw a synthetic :class:`Dataset`; identical configs give identical data.

    Amounts are already in 2020 US dollars, so the output can be fitted
    without conversion tables.
    """
    rng = np.random.default_rng(config.seed)
    lo, hi = config.obs_range
    n_single = int(round(config.singleton_fraction * config.n_studies))
    is_single = np.zeros(config.n_studies, dtype=bool)
    is_single[rng.permutation(config.n_studies)[:n_single]] = True
    records = []
    row_id = 0
    for s in range(config.n_studies):
        n_obs = 1 if is_single[s] else int(rng.integers(lo, hi + 1))
        year = int(rng.integers(1990, 2020))
        country, continent = COUNTRIES[int(rng.integers(len(COUNTRIES)))]
        study = {
            "study_year": year,
            "continent": continent.value,
            "elicitation": list(Elicitation)[int(rng.integers(3))].value,
            "survey_format": list(SurveyFormat)[int(rng.integers(3))].value,
            "payment_vehicle": list(PaymentVehicle)[int(rng.integers(5))].value,
            "payment_terms": list(PaymentTerms)[int(rng.integers(2))].value,
            "income_basis": list(IncomeBasis)[int(rng.integers(3))].value,
            "income_unit": list(IncomeUnit)[int(rng.integers(2))].value,
            "spatial_scale": list(SpatialScale)[int(rng.integers(3))].value,
            "respondent_age": float(np.round(rng.uniform(30, 55), 1)),
            "household_size": float(np.round(rng.uniform(1.8, 4.5), 2)),
        }
        between_sd = config.income_sigma * math.sqrt(max(1.0 - config.income_within_sd ** 2, 0.0))
        ln_inc_study = config.income_mu + between_sd * rng.standard_normal()
        u = config.study_effect_sd * rng.standard_normal()
        xi = config.xi_true
        if config.xi_post_2011 is not None and year >= 2011:
            xi = config.xi_post_2011
        for _ in range(n_obs):
            n_tags = int(rng.integers(1, 3))
            tags = sorted(ALL_TAGS[i].value for i in rng.choice(len(ALL_TAGS), n_tags,
                                                                  replace=False))
            rec = dict(study)
            rec["service_tags"] = tags
            rec["service_count"] = n_tags
            rec["sample_size"] = max(10, int(round(math.exp(
                config.sample_size_mu + config.sample_size_sigma * rng.standard_normal()))))
            ln_inc = ln_inc_study + config.income_sigma * config.income_within_sd \
                * rng.standard_normal()
            sd = config.noise_sd
            if config.size_informative_noise:
                sd *= math.sqrt(math.exp(config.sample_size_mu) / rec["sample_size"])
            eps = sd * rng.standard_normal()
            ln_wtp = config.intercept + xi * ln_inc + u + eps
            ln_wtp += sum(b * _feature(k, rec) for k, b in sorted(config.covariate_effects.items()))
            income_value = float(math.exp(ln_inc))
            if config.bracket_fraction and rng.uniform() < config.bracket_fraction:
                income = _brackets_around(income_value, rng)
            else:
                income = MonetaryAmount(income_value, "USD", TARGET_YEAR)
            records.append(ObservationRecord(
                study_id="S%04d" % s,
                wtp=MonetaryAmount(float(math.exp(ln_wtp)), "USD", TARGET_YEAR),
                wtp_frequency=Frequency.YEARLY,
                income=income,
                income_basis=IncomeBasis(rec["income_basis"]),
                income_unit=IncomeUnit(rec["income_unit"]),
                sample_size=rec["sample_size"],
                publication_year=year + 4,
                elicitation=Elicitation(rec["elicitation"]),
                survey_format=SurveyFormat(rec["survey_format"]),
                payment_vehicle=PaymentVehicle(rec["payment_vehicle"]),
                payment_terms=PaymentTerms(rec["payment_terms"]),
                spatial_scale=SpatialScale(rec["spatial_scale"]),
                continent=Continent(rec["continent"]),
                country=country,
                service_tags=frozenset(tags),
                service_count=n_tags,
                study_year=year,
                respondent_age=rec["respondent_age"],
                household_size=rec["household_size"],
                row_id=row_id,
            ))
            row_id += 1
    return Dataset(tuple(records))


@dataclass
class RecoveryReport:
    reps: int
    xi_true: float
    bias: float
    rmse: float
    coverage: float
    failures: int
    config_fingerprint: str
    spec_fingerprint: str
    estimates: list = field(default_factory=list, repr=False)

    def to_dict(self, include_estimates=False):
        out = {k: v for k, v in asdict(self).items() if k != "estimates"}
        if include_estimates:
            out["estimates"] = list(self.estimates)
        return out

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), sort_keys=True, **kwargs)


def rep_seed(root, rep):
    """Independent 32-bit seed for replication ``rep`` derived from ``root``."""
    return int(np.random.SeedSequence(root, spawn_key=(rep,)).generate_state(1)[0])


def _one_rep(args):
    config, spec, cov_type, rep = args
    ds = generate(config.replace(seed=rep_seed(config.seed, rep)))
    try:
        res = fit_design(build_design(ds, spec, warn=False), spec.estimator, cov_type)
    except (ValueError, np.linalg.LinAlgError):
        return None
    lo, hi = res.conf_int()
    return res.xi, lo, hi


def recovery_experiment(config, spec=None, reps=200, cov_type="cluster", workers=1):
    """Bias, RMSE and 95% interval coverage of the elasticity over ``reps`` draws.

    Replication ``r`` uses the seed ``rep_seed(config.seed, r)``, so results
    do not depend on ``workers``.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    spec = ModelSpec() if spec is None else spec
    jobs = [(config, spec, cov_type, r) for r in range(reps)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        import multiprocessing as mp
        with ProcessPoolExecutor(workers, mp_context=mp.get_context("fork")) as pool:
            out = list(pool.map(_one_rep, jobs, chunksize=max(1, reps // (4 * workers))))
    else:
        out = [_one_rep(j) for j in jobs]
    ok = [o for o in out if o is not None]
    if not ok:
        raise RuntimeError("every replication failed to fit")
    est = np.array([o[0] for o in ok])
    truth = config.xi_true
    covered = np.mean([lo <= truth <= hi for _, lo, hi in ok])
    return RecoveryReport(
        reps=reps, xi_true=truth, bias=float(np.mean(est) - truth),
        rmse=float(np.sqrt(np.mean((est - truth) ** 2))), coverage=float(covered),
        failures=reps - len(ok), config_fingerprint=config.fingerprint(),
        spec_fingerprint=spec.fingerprint(), estimates=[float(e) for e in est],
    )


def weight_scheme_comparison(config, schemes=("sqrt_n", "inv_n"), reps=100, spec=None):
    """RMSE of the elasticity under alternative weight schemes, sorted best first."""
    spec = ModelSpec() if spec is None else spec
    rows = []
    for scheme in schemes:
        rep = recovery_experiment(config, spec.replace(weight_scheme=scheme), reps)
        rows.append({"weight_scheme": scheme, "rmse": rep.rmse, "bias": rep.bias,
                     "coverage": rep.coverage})
    return sorted(rows, key=lambda r: (r["rmse"], r["weight_scheme"]))
