import sys
import warnings
from pathlib import Path

import numpy as np
import pytest

from scarcity.dataset import (
    Continent, Dataset, Elicitation, Frequency, IncomeBasis, IncomeUnit, MonetaryAmount,
    ObservationRecord, PaymentTerms, PaymentVehicle, SpatialScale, SurveyFormat,
)
from scarcity.design import DesignMatrix

sys.path.insert(0, str(Path(__file__).parent))

DATA = Path(__file__).resolve().parents[1] / "src" / "scarcity" / "data"


def make_obs(row_id=0, study="S1", wtp=10.0, income=1000.0, n=100, country="USA",
             continent=Continent.NORTH_AMERICA, tags=("climate",), year=2010, **kw):
    fields = dict(
        study_id=study,
        wtp=wtp if isinstance(wtp, MonetaryAmount) else MonetaryAmount(wtp, "USD", year),
        wtp_frequency=Frequency.YEARLY,
        income=income if not isinstance(income, (int, float)) else MonetaryAmount(
            float(income), "USD", year),
        income_basis=IncomeBasis.NET,
        income_unit=IncomeUnit.HOUSEHOLD,
        sample_size=n,
        publication_year=(year or 2010) + 4,
        elicitation=Elicitation.DICHOTOMOUS,
        survey_format=SurveyFormat.WRITTEN,
        payment_vehicle=PaymentVehicle.TAX,
        payment_terms=PaymentTerms.RECURRING,
        spatial_scale=SpatialScale.NATIONAL,
        continent=continent,
        country=country,
        service_tags=frozenset(tags),
        study_year=year,
        respondent_age=40.0,
        household_size=2.5,
        row_id=row_id,
    )
    fields.update(kw)
    return ObservationRecord(**fields)


@pytest.fixture
def obs_factory():
    return make_obs


def design(x, y, groups=None, w=None, names=None):
    """Design with an intercept plus the columns of ``x``."""
    x = np.asarray(x, float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    names = names or ["ln_income"] + ["x%d" % j for j in range(1, x.shape[1])]
    return DesignMatrix(np.asarray(y, float), np.column_stack([np.ones(n), x]),
                        ["const"] + names, np.ones(n) if w is None else np.asarray(w, float),
                        np.arange(n) if groups is None else np.asarray(groups))


@pytest.fixture
def small_panel():
    """Nine observations in three studies with two regressors (<= 10-row fixture)."""
    rng = np.random.default_rng(11)
    groups = np.array(["a", "a", "a", "b", "b", "c", "c", "c", "c"])
    x = rng.normal(size=(9, 2))
    y = 0.3 + x @ np.array([0.8, -0.4]) + rng.normal(scale=0.3, size=9) \
        + np.array([0.5 if g == "a" else -0.2 if g == "b" else 0.1 for g in groups])
    w = rng.uniform(0.5, 3.0, size=9)
    return x, y, groups, w


@pytest.fixture(autouse=True)
def _quiet_design_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="dropped ")
        yield


# acceptance criterion outcomes, echoed in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
