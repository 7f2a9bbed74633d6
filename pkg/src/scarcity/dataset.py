"""Observation records, ingestion and the data-cleaning rules.

An observation is one (mean WTP, mean income) pair from a contingent
valuation study together with the covariates used in the meta-regression.
Ingestion reads a comma-separated file, validates each row and keeps a list
of rejected rows; :func:`prepare` applies the cleaning rules (annualising,
bracket-income imputation, study-year imputation, currency conversion and
provision-level selection) and returns a new :class:`Dataset` expressed in
2020 US dollars.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

TARGET_YEAR = 2020
DEFAULT_STUDY_LAG = 4.0
BRACKET_SHARE_TOLERANCE = 0.02
LOW_MULT = 0.75
HIGH_MULT = 1.5
NEGATIVE_FLOOR = 1e-4


class DataError(ValueError):
    """Raised when input data violates a documented constraint."""


class SchemaError(DataError):
    pass


class ConversionError(DataError):
    pass


class Frequency(str, Enum):
    MONTHLY = "monthly"
    YEARLY = "yearly"
    ONE_TIME = "one_time"


class IncomeBasis(str, Enum):
    GROSS = "gross"
    NET = "net"
    UNCLEAR = "unclear"


class IncomeUnit(str, Enum):
    PERSON = "person"
    HOUSEHOLD = "household"


class Elicitation(str, Enum):
    DICHOTOMOUS = "dichotomous"
    OPEN_ENDED = "open_ended"
    OTHER = "other"


class SurveyFormat(str, Enum):
    WRITTEN = "written"
    ORAL = "oral"
    MIXED = "mixed"


class PaymentVehicle(str, Enum):
    TAX = "tax"
    DONATION = "donation"
    USE_CHARGE = "use_charge"
    FREE_CHOICE = "free_choice"
    MIXED = "mixed"


class PaymentTerms(str, Enum):
    RECURRING = "recurring"
    ONE_TIME = "one_time"


class SpatialScale(str, Enum):
    LOCAL_REGIONAL = "local_regional"
    NATIONAL = "national"
    INTERNATIONAL = "international"


class Continent(str, Enum):
    NORTH_AMERICA = "north_america"
    SOUTH_AMERICA = "south_america"
    AFRICA = "africa"
    EUROPE = "europe"
    ASIA = "asia"
    AUSTRALIA = "australia"


class ServiceTag(str, Enum):
    WATER_REGULATION = "water_regulation"
    AIR_QUALITY = "air_quality"
    CLIMATE = "climate"
    EROSION = "erosion"
    PURIFICATION_WASTE = "purification_waste"
    NATURAL_HAZARD = "natural_hazard"
    DISEASE = "disease"
    PEST = "pest"
    POLLINATION = "pollination"
    AESTHETIC = "aesthetic"
    RECREATION_ECOTOURISM = "recreation_ecotourism"
    SPIRITUAL_RELIGIOUS = "spiritual_religious"
    BIODIVERSITY = "biodiversity"
    FOREST = "forest"


REGULATING_TAGS = (
    ServiceTag.WATER_REGULATION, ServiceTag.AIR_QUALITY, ServiceTag.CLIMATE,
    ServiceTag.EROSION, ServiceTag.PURIFICATION_WASTE, ServiceTag.NATURAL_HAZARD,
    ServiceTag.DISEASE, ServiceTag.PEST, ServiceTag.POLLINATION,
)
CULTURAL_TAGS = (
    ServiceTag.AESTHETIC, ServiceTag.RECREATION_ECOTOURISM, ServiceTag.SPIRITUAL_RELIGIOUS,
)
# regulating + cultural services, toggled together in specification searches
ES_GROUP_TAGS = REGULATING_TAGS + CULTURAL_TAGS


@dataclass(frozen=True)
class MonetaryAmount:
    value: float
    currency: str
    base_year: Optional[int] = None

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise DataError("monetary value must be finite, got %r" % self.value)
        if len(self.currency) != 3 or not self.currency.isalpha():
            raise DataError("currency must be a 3-letter code, got %r" % self.currency)
        if self.base_year is not None and not 1980 <= self.base_year <= 2030:
            raise DataError("base year %r outside [1980, 2030]" % self.base_year)

    def scaled(self, factor, currency=None, base_year=None):
        return MonetaryAmount(
            self.value * factor,
            currency or self.currency,
            self.base_year if base_year is None else base_year,
        )


@dataclass(frozen=True)
class IncomeBracketTable:
    """Grouped income distribution: ``(lower, upper, share)`` rows, ``None`` for open ends."""

    brackets: tuple

    def __post_init__(self):
        rows = tuple((_opt_float(lo), _opt_float(hi), float(s)) for lo, hi, s in self.brackets)
        object.__setattr__(self, "brackets", rows)
        if not rows:
            raise DataError("bracket table is empty")
        for i, (lo, hi, share) in enumerate(rows):
            if not 0.0 <= share <= 1.0:
                raise DataError("bracket share %r outside [0, 1]" % share)
            if lo is None and i != 0:
                raise DataError("only the first bracket may be open at the bottom")
            if hi is None and i != len(rows) - 1:
                raise DataError("only the last bracket may be open at the top")
            if lo is None and hi is None:
                raise DataError("a bracket cannot be open at both ends")
            if lo is not None and hi is not None and hi < lo:
                raise DataError("bracket upper bound below lower bound: %r" % ((lo, hi),))
            if i > 0:
                prev_hi = rows[i - 1][1]
                if lo is None or prev_hi is None or lo < prev_hi:
                    raise DataError("brackets must be ascending and non-overlapping")
        total = sum(r[2] for r in rows)
        if abs(total - 1.0) > BRACKET_SHARE_TOLERANCE and total > 0:
            raise DataError("bracket shares sum to %.4f, expected 1 +/- %.2f"
                            % (total, BRACKET_SHARE_TOLERANCE))

    def to_json(self):
        return json.dumps([list(r) for r in self.brackets], separators=(",", ":"))

    @classmethod
    def from_json(cls, text):
        rows = json.loads(text)
        if not isinstance(rows, list) or not all(isinstance(r, list) and len(r) == 3 for r in rows):
            raise DataError("bracket cell must be a JSON array of [lo, hi, share] triples")
        return cls(tuple(tuple(r) for r in rows))


def _opt_float(x):
    return None if x is None else float(x)


@dataclass(frozen=True)
class ObservationRecord:
    study_id: str
    wtp: MonetaryAmount
    wtp_frequency: Frequency
    income: Union[MonetaryAmount, IncomeBracketTable]
    income_basis: IncomeBasis
    income_unit: IncomeUnit
    sample_size: int
    publication_year: int
    elicitation: Elicitation
    survey_format: SurveyFormat
    payment_vehicle: PaymentVehicle
    payment_terms: PaymentTerms
    spatial_scale: SpatialScale
    continent: Continent
    country: str
    service_tags: frozenset = frozenset()
    service_count: Optional[int] = None
    study_year: Optional[int] = None
    study_year_imputed: bool = False
    respondent_age: Optional[float] = None
    household_size: Optional[float] = None
    provision_level: Optional[float] = None
    level_group_id: Optional[str] = None
    row_id: int = 0

    def __post_init__(self):
        if self.sample_size < 1:
            raise DataError("sample_size must be >= 1, got %r" % self.sample_size)
        tags = frozenset(ServiceTag(t) for t in self.service_tags)
        object.__setattr__(self, "service_tags", tags)
        if self.service_count is None:
            object.__setattr__(self, "service_count", max(1, len(tags)))
        if self.service_count < 1:
            raise DataError("service_count must be >= 1")
        if self.service_count < len(tags):
            raise DataError("service_count %d smaller than the number of tags %d"
                            % (self.service_count, len(tags)))

    @property
    def income_value(self):
        """Mean income when known, ``None`` while a bracket table awaits imputation."""
        return self.income.value if isinstance(self.income, MonetaryAmount) else None


@dataclass(frozen=True)
class RowError:
    row: int
    reason: str


@dataclass(frozen=True)
class ConversionTables:
    """National CPI series ``{country: {year: cpi}}`` and PPP multipliers ``{country: factor}``."""

    cpi: Mapping
    ppp: Mapping

    @classmethod
    def from_files(cls, cpi_path, ppp_path):
        cpi = {}
        for row in _read_rows(cpi_path, ("country", "year", "cpi")):
            cpi.setdefault(row["country"], {})[int(row["year"])] = float(row["cpi"])
        ppp = {row["country"]: float(row["ppp_to_usd"])
               for row in _read_rows(ppp_path, ("country", "ppp_to_usd"))}
        return cls(cpi, ppp)

    def covers(self, country, year):
        series = self.cpi.get(country)
        return country in self.ppp and bool(series) and TARGET_YEAR in series and year is not None

    def cpi_for(self, country, year):
        """CPI in ``year``; outside the series the nearest year-over-year rate is extrapolated."""
        series = self.cpi.get(country)
        if not series:
            raise ConversionError("no CPI series for country %r" % country)
        if year in series:
            return series[year]
        years = sorted(series)
        if len(years) < 2:
            raise ConversionError("CPI series for %r too short to extrapolate to %d" % (country, year))
        if year < years[0]:
            y0, y1 = years[0], years[1]
            rate = (series[y1] / series[y0]) ** (1.0 / (y1 - y0))
            return series[y0] / rate ** (y0 - year)
        if year > years[-1]:
            y0, y1 = years[-2], years[-1]
            rate = (series[y1] / series[y0]) ** (1.0 / (y1 - y0))
            return series[y1] * rate ** (year - y1)
        # interior gap: geometric interpolation between neighbours
        lo = max(y for y in years if y < year)
        hi = min(y for y in years if y > year)
        frac = (year - lo) / (hi - lo)
        return series[lo] * (series[hi] / series[lo]) ** frac


def _read_rows(path, required):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in required if c not in (reader.fieldnames or [])]
        if missing:
            raise SchemaError("%s: missing column(s) %s" % (path, ", ".join(missing)))
        return list(reader)


@dataclass(frozen=True)
class Dataset:
    observations: tuple
    conversion_tables: Optional[ConversionTables] = None
    errors: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "observations", tuple(self.observations))
        object.__setattr__(self, "errors", tuple(self.errors))

    def __len__(self):
        return len(self.observations)

    def __iter__(self):
        return iter(self.observations)

    @property
    def study_ids(self):
        return sorted({o.study_id for o in self.observations})

    def subset(self, keep):
        """New dataset with the observations for which ``keep(obs)`` is true."""
        return replace(self, observations=tuple(o for o in self.observations if keep(o)), errors=())

    def uncovered(self):
        """Row ids whose country/year lacks conversion coverage."""
        if self.conversion_tables is None:
            return []
        return [o.row_id for o in self.observations
                if not self.conversion_tables.covers(o.country, o.study_year)]

    def to_frame(self):
        """Flat :class:`pandas.DataFrame` view, one row per observation."""
        rows = []
        for o in self.observations:
            rows.append({
                "row_id": o.row_id,
                "study_id": o.study_id,
                "wtp": o.wtp.value,
                "income": o.income_value,
                "wtp_frequency": o.wtp_frequency.value,
                "income_basis": o.income_basis.value,
                "income_unit": o.income_unit.value,
                "sample_size": o.sample_size,
                "study_year": o.study_year,
                "publication_year": o.publication_year,
                "elicitation": o.elicitation.value,
                "survey_format": o.survey_format.value,
                "payment_vehicle": o.payment_vehicle.value,
                "payment_terms": o.payment_terms.value,
                "spatial_scale": o.spatial_scale.value,
                "continent": o.continent.value,
                "country": o.country,
                "service_tags": o.service_tags,
                "service_count": o.service_count,
                "respondent_age": o.respondent_age,
                "household_size": o.household_size,
            })
        return pd.DataFrame(rows)


# --------------------------------------------------------------------------
# file format

COLUMNS = (
    "row_id", "study_id", "wtp", "wtp_frequency", "currency", "price_year", "income",
    "income_basis", "income_unit", "sample_size", "study_year", "study_year_imputed",
    "publication_year", "elicitation", "survey_format", "payment_vehicle", "payment_terms",
    "service_tags", "service_count", "spatial_scale", "continent", "country",
    "respondent_age", "household_size", "provision_level", "level_group_id",
)
MANDATORY = (
    "study_id", "wtp", "wtp_frequency", "currency", "income", "income_basis", "income_unit",
    "sample_size", "publication_year", "elicitation", "survey_format", "payment_vehicle",
    "payment_terms", "spatial_scale", "continent", "country",
)


def _blank(s):
    return s is None or s.strip() == ""


def _opt(cast, s):
    return None if _blank(s) else cast(s)


def _parse_int(s):
    value = float(s)
    if not value.is_integer():
        raise ValueError("expected an integer, got %r" % s)
    return int(value)


def _parse_money(s, currency, year, what):
    try:
        value = float(s)
    except (TypeError, ValueError):
        raise DataError("unparseable %s value %r" % (what, s)) from None
    return MonetaryAmount(value, currency, year)


def _parse_row(row, index):
    currency = row["currency"].strip().upper()
    study_year = _opt(_parse_int, row.get("study_year"))
    price_year = _opt(_parse_int, row.get("price_year"))
    base_year = price_year if price_year is not None else study_year
    income_cell = row["income"].strip()
    if income_cell.startswith("["):
        income = IncomeBracketTable.from_json(income_cell)
    else:
        income = _parse_money(income_cell, currency, base_year, "income")
    tags = frozenset(t for t in (row.get("service_tags") or "").split(";") if t.strip())
    return ObservationRecord(
        study_id=row["study_id"].strip(),
        wtp=_parse_money(row["wtp"], currency, base_year, "wtp"),
        wtp_frequency=Frequency(row["wtp_frequency"].strip()),
        income=income,
        income_basis=IncomeBasis(row["income_basis"].strip()),
        income_unit=IncomeUnit(row["income_unit"].strip()),
        sample_size=_parse_int(row["sample_size"]),
        publication_year=_parse_int(row["publication_year"]),
        elicitation=Elicitation(row["elicitation"].strip()),
        survey_format=SurveyFormat(row["survey_format"].strip()),
        payment_vehicle=PaymentVehicle(row["payment_vehicle"].strip()),
        payment_terms=PaymentTerms(row["payment_terms"].strip()),
        spatial_scale=SpatialScale(row["spatial_scale"].strip()),
        continent=Continent(row["continent"].strip()),
        country=row["country"].strip().upper(),
        service_tags=tags,
        service_count=_opt(_parse_int, row.get("service_count")),
        study_year=study_year,
        study_year_imputed=(row.get("study_year_imputed") or "").strip().lower() in ("1", "true"),
        respondent_age=_opt(float, row.get("respondent_age")),
        household_size=_opt(float, row.get("household_size")),
        provision_level=_opt(float, row.get("provision_level")),
        level_group_id=_opt(str.strip, row.get("level_group_id")),
        row_id=_opt(_parse_int, row.get("row_id")) if not _blank(row.get("row_id")) else index,
    )


def read_observations(source, schema=None):
    """Parse delimited text into ``(observations, row_errors)``.

    Parameters
    ----------
    source : str, Path or file-like
        CSV with a header row.
    schema : mapping, optional
        Maps canonical column names to the header names used in the file.
    """
    if hasattr(source, "read"):
        text = source.read()
    else:
        text = Path(source).read_text(encoding="utf-8")
    reader = csv.DictReader(io.StringIO(text))
    header = reader.fieldnames or []
    rename = {v: k for k, v in (schema or {}).items()}
    canonical = [rename.get(h, h) for h in header]
    missing = [c for c in MANDATORY if c not in canonical]
    if missing:
        raise SchemaError("missing mandatory column(s): %s" % ", ".join(missing))
    observations, errors = [], []
    for index, raw in enumerate(reader):
        row = {rename.get(k, k): v for k, v in raw.items()}
        try:
            observations.append(_parse_row(row, index))
        except (DataError, ValueError, KeyError, TypeError) as exc:
            errors.append(RowError(index, str(exc)))
    return observations, errors


def ingest(path, schema=None, conversion_tables=None):
    """Read an observation file into a :class:`Dataset`; malformed rows land in ``errors``."""
    observations, errors = read_observations(path, schema)
    for err in errors:
        logger.warning("row %d rejected: %s", err.row, err.reason)
    return Dataset(tuple(observations), conversion_tables, tuple(errors))


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, Enum):
        return x.value
    if isinstance(x, float):
        return repr(x)
    return str(x)


def observation_to_row(o):
    income = o.income.to_json() if isinstance(o.income, IncomeBracketTable) else o.income.value
    return {
        "row_id": o.row_id,
        "study_id": o.study_id,
        "wtp": o.wtp.value,
        "wtp_frequency": o.wtp_frequency,
        "currency": o.wtp.currency,
        "price_year": o.wtp.base_year if o.wtp.base_year != o.study_year else None,
        "income": income,
        "income_basis": o.income_basis,
        "income_unit": o.income_unit,
        "sample_size": o.sample_size,
        "study_year": o.study_year,
        "study_year_imputed": o.study_year_imputed,
        "publication_year": o.publication_year,
        "elicitation": o.elicitation,
        "survey_format": o.survey_format,
        "payment_vehicle": o.payment_vehicle,
        "payment_terms": o.payment_terms,
        "service_tags": ";".join(sorted(t.value for t in o.service_tags)),
        "service_count": o.service_count,
        "spatial_scale": o.spatial_scale,
        "continent": o.continent,
        "country": o.country,
        "respondent_age": o.respondent_age,
        "household_size": o.household_size,
        "provision_level": o.provision_level,
        "level_group_id": o.level_group_id,
    }


def serialize(ds, path=None):
    """Write ``ds`` in the canonical file format; returns the text."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
    writer.writeheader()
    for o in ds.observations:
        writer.writerow({k: _fmt(v) for k, v in observation_to_row(o).items()})
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


# --------------------------------------------------------------------------
# cleaning rules

def impute_income_from_brackets(table, low_mult=LOW_MULT, high_mult=HIGH_MULT):
    """Mean income implied by a grouped income table.

    Closed brackets contribute their midpoint. The bottom-open bracket uses
    ``upper * low_mult`` and the top-open bracket ``lower * high_mult``. The
    share-weighted sum is divided by the total share, so tables whose shares
    do not add to exactly one are renormalised.
    """
    num = den = 0.0
    for lo, hi, share in table.brackets:
        if lo is None:
            mid = hi * low_mult
        elif hi is None:
            mid = lo * high_mult
        else:
            mid = 0.5 * (lo + hi)
        num += mid * share
        den += share
    if den == 0:
        raise DataError("all bracket shares are zero; mean income undefined")
    return num / den


def impute_study_year(publication_year, lag=DEFAULT_STUDY_LAG):
    """Publication year minus the lag rounded half-up to whole years."""
    shift = int(Decimal(str(lag)).quantize(Decimal(1), rounding=ROUND_HALF_UP))
    return int(publication_year) - shift


def mean_study_lag(observations, default=DEFAULT_STUDY_LAG):
    """Average publication-minus-study lag over records where both years are known."""
    lags = [o.publication_year - o.study_year for o in observations
            if o.study_year is not None and not o.study_year_imputed]
    return float(np.mean(lags)) if lags else default


def normalize_monetary(amount, tables, country, year=None):
    """Convert ``amount`` to 2020 US dollars.

    Inflates with the national CPI from ``year`` (falls back to
    ``amount.base_year``) to 2020, then applies the country's PPP multiplier.
    Amounts already quoted in USD use the ``USA`` CPI series and no PPP step.
    """
    year = amount.base_year if year is None else year
    if year is None:
        raise ConversionError("no price year for amount; impute the study year first")
    if amount.currency == "USD":
        key, ppp = "USA", 1.0
    else:
        key = country
        if country not in tables.ppp:
            raise ConversionError("missing PPP factor for country %r" % country)
        ppp = tables.ppp[country]
    if year == TARGET_YEAR:
        inflator = 1.0
    else:
        inflator = tables.cpi_for(key, TARGET_YEAR) / tables.cpi_for(key, year)
    return amount.value * inflator * ppp


def annualize_wtp(amount, frequency):
    """Monthly payments are scaled to a year; yearly and one-time pass through."""
    frequency = Frequency(frequency)
    if not math.isfinite(amount):
        raise DataError("WTP must be finite")
    if frequency is Frequency.MONTHLY:
        return amount * 12.0
    return float(amount)


def transform_wtp(wtp, policy="signed_log"):
    """Log-transform a WTP value, with two treatments for negative bids.

    Returns ``(ln_value, negative_flag)``.
    """
    if wtp == 0:
        raise DataError("WTP of zero has no logarithm")
    if wtp > 0:
        return math.log(wtp), False
    if policy == "signed_log":
        return -math.log(abs(wtp)), True
    if policy == "floor_substitute":
        return math.log(NEGATIVE_FLOOR), True
    raise ValueError("unknown negative-WTP policy %r" % policy)


def select_level_variants(group, mode="most_marginal"):
    """Reduce observations that value several provision levels of one good.

    ``most_marginal`` keeps the smallest provision level (ties go to the
    smaller WTP), ``average`` keeps that record with WTP replaced by the mean
    across levels, ``all_separate`` returns the group untouched.
    """
    group = list(group)
    if not group:
        raise DataError("empty provision-level group")
    if mode == "all_separate" or len(group) == 1:
        return group
    if any(o.provision_level is None for o in group):
        raise DataError("provision_level missing in level group %r" % group[0].level_group_id)
    ranked = sorted(group, key=lambda o: (o.provision_level, o.wtp.value, o.row_id))
    best = ranked[0]
    if len(ranked) > 1 and ranked[1].provision_level == best.provision_level:
        logger.info("tie at provision level %s in group %s; kept smallest WTP (row %d)",
                    best.provision_level, best.level_group_id, best.row_id)
    if mode == "most_marginal":
        return [best]
    if mode == "average":
        mean = float(np.mean([o.wtp.value for o in group]))
        return [replace(best, wtp=replace(best.wtp, value=mean))]
    raise ValueError("unknown level mode %r" % mode)


def bracket_multiplier_grid(low=None, high=None):
    low = np.round(np.arange(0.0, 0.95, 0.1), 10) if low is None else low
    high = np.round(np.arange(1.0, 1.95, 0.1), 10) if high is None else high
    return [(float(a), float(b)) for a in low for b in high]


def prepare(ds, tables=None, level_mode="most_marginal", low_mult=LOW_MULT,
            high_mult=HIGH_MULT, lag=None):
    """Apply the cleaning rules and return an analysis-ready dataset.

    Steps, in order: study-year imputation (lag re-estimated from the data
    unless given), bracket-income imputation, annualising monthly WTP,
    conversion to 2020 USD (skipped when ``tables`` is ``None`` and amounts
    are already in USD), and provision-level selection.
    """
    tables = tables if tables is not None else ds.conversion_tables
    lag = mean_study_lag(ds.observations) if lag is None else lag
    cleaned = []
    for o in ds.observations:
        study_year, imputed = o.study_year, o.study_year_imputed
        if study_year is None:
            study_year, imputed = impute_study_year(o.publication_year, lag), True
        year = o.wtp.base_year if o.wtp.base_year is not None else study_year
        if isinstance(o.income, IncomeBracketTable):
            income = MonetaryAmount(impute_income_from_brackets(o.income, low_mult, high_mult),
                                    o.wtp.currency, year)
        else:
            income = replace(o.income, base_year=year)
        wtp = MonetaryAmount(annualize_wtp(o.wtp.value, o.wtp_frequency), o.wtp.currency, year)
        if tables is not None:
            wtp_usd = normalize_monetary(wtp, tables, o.country, year)
            inc_usd = normalize_monetary(income, tables, o.country, year)
        elif wtp.currency == "USD":
            wtp_usd, inc_usd = wtp.value, income.value
        else:
            raise ConversionError("conversion tables required for %s amounts (row %d)"
                                  % (wtp.currency, o.row_id))
        freq = Frequency.YEARLY if o.wtp_frequency is Frequency.MONTHLY else o.wtp_frequency
        cleaned.append(replace(
            o,
            wtp=MonetaryAmount(wtp_usd, "USD", TARGET_YEAR),
            income=MonetaryAmount(inc_usd, "USD", TARGET_YEAR),
            wtp_frequency=freq,
            study_year=study_year,
            study_year_imputed=imputed,
        ))
    out, seen = [], set()
    for o in cleaned:
        if o.level_group_id is None:
            out.append(o)
        elif o.level_group_id not in seen:
            seen.add(o.level_group_id)
            members = [c for c in cleaned if c.level_group_id == o.level_group_id
                       and c.study_id == o.study_id]
            out.extend(select_level_variants(members, level_mode))
    out.sort(key=lambda o: o.row_id)
    return Dataset(tuple(out), tables, ds.errors)


# --------------------------------------------------------------------------
# summary table

def _mean_sd(values):
    values = np.asarray([v for v in values if v is not None], dtype=float)
    if values.size == 0:
        return {"mean": None, "sd": None, "n": 0}
    sd = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return {"mean": float(np.mean(values)), "sd": sd, "n": int(values.size)}


def summarize(ds):
    """Descriptive statistics with the same rows as the data-description table."""
    if not len(ds):
        raise DataError("cannot summarise an empty dataset")
    obs = ds.observations
    continents = {c.value: 0 for c in Continent}
    for o in obs:
        continents[o.continent.value] += 1
    return {
        "studies": len({o.study_id for o in obs}),
        "observations": len(obs),
        "countries": len({o.country for o in obs}),
        "continent_observations": continents,
        "study_year": _mean_sd(o.study_year for o in obs),
        "income": _mean_sd(o.income_value for o in obs),
        "wtp": _mean_sd(o.wtp.value for o in obs),
        "sample_size": _mean_sd(o.sample_size for o in obs),
        "respondent_age": _mean_sd(o.respondent_age for o in obs),
        "household_size": _mean_sd(o.household_size for o in obs),
        "forest_share": float(np.mean([ServiceTag.FOREST in o.service_tags for o in obs])),
    }
