import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_obs
from scarcity.dataset import Continent, Dataset
from scarcity.design import (
    DesignEncoder, DesignError, ModelSpec, build_design, independent_columns, parse_filter,
    sample_weights,
)


def test_sqrt_n_weights():
    assert np.allclose(sample_weights([4, 9], "sqrt_n"), [2.0, 3.0])
    assert np.allclose(sample_weights([4, 9], "none"), [1.0, 1.0])
    assert np.allclose(sample_weights([4, 9], "inv_sqrt_n"), [0.5, 1 / 3])
    assert np.allclose(sample_weights([4, 9], "n"), [4, 9])
    assert np.allclose(sample_weights([4, 9], "inv_n"), [0.25, 1 / 9])


def test_unknown_weight_scheme():
    with pytest.raises(ValueError):
        ModelSpec(weight_scheme="cube")


def test_spec_validation():
    with pytest.raises(ValueError):
        ModelSpec(covariates=("nonsense",))
    with pytest.raises(ValueError):
        ModelSpec(estimator="lasso")
    with pytest.raises(ValueError):
        ModelSpec(covariates=("study_year", "study_year"))


def test_fingerprint_stable_and_distinct():
    assert ModelSpec().fingerprint() == ModelSpec().fingerprint()
    assert ModelSpec().fingerprint() != ModelSpec(weight_scheme="none").fingerprint()
    assert ModelSpec().replace(weight_scheme="none") == ModelSpec(weight_scheme="none")


def _country_panel(counts):
    obs, i = [], 0
    for country, k in counts.items():
        for _ in range(k):
            obs.append(make_obs(i, "S%d" % (i // 2), income=1000.0 + 37 * i, country=country))
            i += 1
    return Dataset(tuple(obs))


def test_country_threshold():
    ds = _country_panel({"USA": 90, "DEU": 6, "FRA": 4})
    enc = DesignEncoder(covariates=(), es_group=False).fit(ds)
    assert enc.countries_ == ["DEU"]
    assert enc.reference_levels_["country"] == "USA"


def test_country_indicators_off():
    ds = _country_panel({"USA": 90, "DEU": 10})
    enc = DesignEncoder(covariates=(), es_group=False, country_indicators=False).fit(ds)
    assert enc.countries_ == []


def test_first_column_is_log_income():
    ds = _country_panel({"USA": 10})
    d = build_design(ds, ModelSpec(covariates=(), es_group_included=False), warn=False)
    assert d.column_names[:2] == ["const", "ln_income"]
    assert np.allclose(d.regressors[:, 1], np.log([o.income_value for o in ds]))


def test_constant_columns_dropped_and_recorded():
    # every row shares the same elicitation, so its indicators vanish; service_count is constant
    ds = _country_panel({"USA": 10})
    with pytest.warns(UserWarning, match="dropped"):
        d = build_design(ds, ModelSpec(covariates=("service_count",), es_group_included=False))
    assert ("service_count", "constant") in d.dropped


def test_independent_columns_collinear():
    x = np.arange(6.0)
    X = np.column_stack([np.ones(6), x, 2 * x + 1, x ** 2])
    kept, dropped = independent_columns(X)
    assert kept == [0, 1, 3] and dropped == [(2, "collinear")]


def test_filters():
    a = make_obs(0, continent=Continent.ASIA, tags=("climate", "forest"), year=2012)
    b = make_obs(1, continent=Continent.EUROPE, tags=("water_regulation",), year=2005)
    assert parse_filter("continent == asia")(a) and not parse_filter("continent == asia")(b)
    assert parse_filter("service_tags has forest & study_year >= 2011")(a)
    assert not parse_filter("service_tags has forest & study_year < 2011")(a)
    assert parse_filter("continent in asia,europe")(b)
    assert parse_filter("all")(b)
    with pytest.raises(DesignError):
        parse_filter("continent ~ asia")


def test_empty_subset():
    ds = _country_panel({"USA": 4})
    with pytest.raises(DesignError, match="empty"):
        build_design(ds, ModelSpec(subset_filter="continent == asia"))


def test_bracket_income_must_be_imputed():
    from scarcity.dataset import IncomeBracketTable
    t = IncomeBracketTable(((1000, 2000, 1.0),))
    ds = Dataset((make_obs(0, income=t), make_obs(1, "S2")))
    with pytest.raises(DesignError, match="prepare"):
        build_design(ds, ModelSpec())


@given(st.lists(st.integers(1, 10 ** 6), min_size=1, max_size=20))
def test_weights_positive(ns):
    for scheme in ("none", "sqrt_n", "n", "inv_n", "inv_sqrt_n"):
        w = sample_weights(ns, scheme)
        assert np.all(w > 0) and w.shape == (len(ns),)
