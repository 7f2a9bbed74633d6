import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from scarcity.accounting import (
    DiscountingConfig, adjust_account, adjust_portfolio, present_value, uplift_curve,
    uplift_factor, wtp_path,
)

BASE = DiscountingConfig(0.04, 100)


def _quad_pv(growth, rate, horizon):
    return integrate.quad(lambda t: math.exp((growth - rate) * t), 0, horizon, limit=200)[0]


def test_zero_growth_pv():
    assert present_value(1.0, 0.0, BASE) == pytest.approx((1 - math.exp(-4)) / 0.04)
    assert present_value(1.0, 0.0, BASE) == pytest.approx(24.542, abs=1e-3)


@given(st.floats(-0.05, 0.1), st.floats(0.001, 0.1), st.floats(1, 300))
def test_continuous_pv_matches_quadrature(g, r, T):
    pv = present_value(2.5, g, DiscountingConfig(r, T))
    assert pv == pytest.approx(2.5 * _quad_pv(g, r, T), rel=1e-8)


def test_growth_equal_to_rate():
    assert present_value(3.0, 0.04, BASE) == pytest.approx(300.0)


def test_infinite_horizon():
    cfg = DiscountingConfig(0.04, math.inf)
    assert present_value(1.0, 0.01, cfg) == pytest.approx(1 / 0.03)
    assert present_value(1.0, 0.05, cfg) == math.inf
    with pytest.raises(ValueError):
        DiscountingConfig(0.0, math.inf)


@given(st.floats(-0.05, 0.1), st.floats(0.0, 0.1), st.integers(1, 200))
def test_discrete_matches_explicit_sum(g, r, T):
    pv = present_value(1.0, g, DiscountingConfig(r, T, "discrete_annual"))
    ref = math.fsum(((1 + g) / (1 + r)) ** t for t in range(1, T + 1))
    assert pv == pytest.approx(ref, rel=1e-9)


def test_uplift_published_values():
    # forest gap 1.93%, elasticity 1 and 2, 4% over 100 years
    assert round(uplift_factor(0.0193, BASE).uplift, 4) == 0.7200
    assert round(uplift_factor(2 * 0.0193, BASE).uplift, 4) == 2.8023


def test_uplift_zero_exact():
    assert uplift_factor(0.0, BASE).uplift == 0.0


@given(st.floats(-0.05, 0.05), st.floats(0.0001, 0.05))
def test_uplift_monotone_in_rpc(rpc, step):
    assert uplift_factor(rpc + step, BASE).uplift > uplift_factor(rpc, BASE).uplift


def test_curve_rows_and_band():
    rows = uplift_curve([0.5, 1.0, 2.0], 0.1, 0.0193, [BASE, DiscountingConfig(0.02, 100)])
    assert len(rows) == 6
    for r in rows:
        assert r["ci_low"] <= r["uplift"] <= r["ci_high"]
    first = [r["uplift"] for r in rows[:3]]
    assert first == sorted(first)
    with pytest.raises(ValueError):
        uplift_curve([1.0, 0.5], 0.1, 0.0193, [BASE])


def test_discrete_is_close_to_continuous():
    disc = uplift_factor(0.0193, DiscountingConfig(0.04, 100, "discrete_annual")).uplift
    assert abs(disc - 0.7200) < 0.05


def test_wtp_path():
    t, v = wtp_path(10.0, 0.02, 5)
    assert np.allclose(t, [0, 1, 2, 3, 4, 5])
    assert v[-1] == pytest.approx(10 * math.exp(0.1))


def test_portfolio():
    rows, change = adjust_portfolio([
        {"name": "forest", "baseline": 30.0, "uplift": 0.72},
        {"name": "minerals", "baseline": 70.0},
    ])
    assert rows[0]["adjusted"] == pytest.approx(51.6)
    assert rows[1]["adjusted"] == 70.0
    assert change == pytest.approx(0.3 * 0.72)
    assert adjust_account(10.0, uplift_factor(0.0, BASE)) == 10.0
