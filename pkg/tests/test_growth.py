import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from scarcity.growth import (
    CATEGORIES, ExponentialGrowth, GrowthError, GrowthEstimate, RECENT_WINDOW, TimeSeries,
    aggregate_category, bundled_series_path, fit_exponential_growth, growth_gap, growth_table,
    read_series,
)


@pytest.fixture(scope="module")
def table():
    return growth_table(read_series(bundled_series_path()))


def test_exact_exponential():
    years = np.arange(2000, 2011)
    est = fit_exponential_growth(TimeSeries("x", years, 5.0 * np.exp(0.03 * (years - 2000))),
                                 window=None)
    assert est.g == pytest.approx(0.03, abs=1e-12)
    assert est.se < 1e-12


def test_se_matches_linregress():
    rng = np.random.default_rng(1)
    years = np.arange(1993, 2017)
    values = np.exp(0.01 * years / 10 + rng.normal(scale=0.02, size=years.size))
    est = fit_exponential_growth(TimeSeries("x", years, values))
    ref = stats.linregress(years, np.log(values))
    assert est.g == pytest.approx(ref.slope, rel=1e-10)
    assert est.se == pytest.approx(ref.stderr, rel=1e-10)


def test_window_and_minimum_points():
    years = np.arange(2000, 2020)
    s = TimeSeries("x", years, np.exp(0.02 * (years - 2000)))
    assert fit_exponential_growth(s, RECENT_WINDOW).n_points == 7
    with pytest.raises(GrowthError, match="need at least 3"):
        fit_exponential_growth(s, (2018, 2030))


def test_negated_growth_for_bads():
    years = np.arange(2000, 2010)
    s = TimeSeries("air", years, np.exp(0.05 * (years - 2000)), transform="negate_growth")
    assert fit_exponential_growth(s, None).g == pytest.approx(-0.05)


def test_remaining_budget():
    years = np.arange(2000, 2010)
    budget = 1.5 * np.exp(-0.02 * (years - 2000))
    s = TimeSeries("climate", years, 2.0 - budget, transform="remaining_budget")
    assert fit_exponential_growth(s, None).g == pytest.approx(-0.02)


def test_budget_exhausted_names_year():
    s = TimeSeries("climate", [2000, 2001, 2002], [1.5, 1.9, 2.1], transform="remaining_budget")
    with pytest.raises(GrowthError, match="2002"):
        fit_exponential_growth(s, None)


def test_unsorted_years_rejected():
    with pytest.raises(GrowthError):
        TimeSeries("x", [2001, 2000], [1.0, 1.0])


def test_sklearn_shape():
    years = np.arange(2000, 2010)
    m = ExponentialGrowth().fit(years, 3 * np.exp(0.01 * years))
    assert np.allclose(m.predict(years), 3 * np.exp(0.01 * years))
    assert m.get_params() == {}


def test_category_rules():
    est = {"a": GrowthEstimate(0.01, 0.002, (1993, 2016), 24, "a"),
           "b": GrowthEstimate(-0.03, 0.005, (1993, 2016), 24, "b")}
    cat = aggregate_category(["a", "b"], est, "c")
    assert cat.g == pytest.approx(-0.01)
    assert cat.se == 0.005 and cat.meta["max_se_member"] == "b"
    with pytest.raises(GrowthError):
        aggregate_category(["a", "z"], est)


def test_gap_quadrature():
    gap = growth_gap(GrowthEstimate(0.02, 0.003, (0, 1), 3), GrowthEstimate(-0.01, 0.004, (0, 1), 3))
    assert gap.g == pytest.approx(0.03)
    assert gap.se == pytest.approx(0.005)


@settings(max_examples=40)
@given(st.lists(st.tuples(st.floats(-0.1, 0.1), st.floats(0, 0.1)), min_size=1, max_size=6))
def test_category_mean_bounds(pairs):
    est = {str(i): GrowthEstimate(g, s, (0, 10), 11) for i, (g, s) in enumerate(pairs)}
    cat = aggregate_category(list(est), est)
    assert min(g for g, _ in pairs) - 1e-15 <= cat.g <= max(g for g, _ in pairs) + 1e-15
    assert cat.se == max(s for _, s in pairs)


# published rates and SEs, in percent with two decimals
TABLE = {
    "forest": (-0.11, 0.00), "lpi": (-2.84, 0.06), "rli": (-0.42, 0.01),
    "air": (-0.16, 0.17), "climate": (-1.50, 0.14),
}


@pytest.mark.parametrize("name", sorted(TABLE))
def test_bundled_components(table, name):
    est = table["components"][name]
    g, se = TABLE[name]
    assert round(100 * est.g, 2) == g
    assert round(100 * est.se, 2) == se


def test_bundled_categories_and_gaps(table):
    cats, gaps = table["categories"], table["gaps"]
    assert round(100 * cats["aggregate"].g, 2) == -1.01
    assert round(100 * cats["regulating"].g, 2) == -1.01
    assert round(100 * cats["cultural"].g, 2) == -1.12
    assert round(100 * table["gdp"].g, 2) == 1.82
    assert round(100 * gaps["aggregate"].g, 2) == 2.83
    assert round(100 * gaps["forest"].g, 2) == 1.93
    assert set(CATEGORIES["cultural"]) == {"forest", "lpi", "rli"}


def test_max_se_note(table):
    assert table["categories"]["aggregate"].meta["max_se_member"] == "air"
    assert any("air" in n for n in table["notes"])


def test_read_series_missing_column(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("name,value\nx,1\n")
    with pytest.raises(GrowthError, match="year"):
        read_series(p)


def test_bundled_units():
    s = read_series(bundled_series_path())
    assert s["forest"].units == "million km2"
    assert math.isclose(s["climate"].cap, 2.0)
