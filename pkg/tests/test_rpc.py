import math

import pytest
from hypothesis import example, given
from hypothesis import strategies as st

from scarcity.growth import GrowthEstimate
from scarcity.rpc import (
    CesPreferences, Elasticity, RpcError, ces_marginal_elasticities, ces_utility, mrs,
    ramsey_rates, rpc_ci, rpc_from_paths, rpc_point, rpc_subsistence, sigma_interval,
)


def _gap(g, se=0.0):
    return GrowthEstimate(g, se, (1993, 2016), 24)


def test_point():
    assert rpc_point(0.8, 2.0) == pytest.approx(1.6)
    assert rpc_point(Elasticity(0.8), _gap(2.0)) == pytest.approx(1.6)


def test_mrs_symmetric_point():
    assert mrs(1.0, 1.0, CesPreferences(1 / 3, 0.5)) == pytest.approx(2.0)


def test_delta_product_interval():
    r = rpc_ci(Elasticity(1.0, 0.1), _gap(0.02, 0.002))
    # half width = 1.96 * 0.02 * sqrt(0.1**2 + 0.1**2)
    assert r.rpc == pytest.approx(0.02)
    assert r.ci_high - r.rpc == pytest.approx(0.0055437, abs=1e-7)
    assert (r.ci_low, r.ci_high) == (pytest.approx(0.014456, abs=1e-6),
                                     pytest.approx(0.025544, abs=1e-6))


def test_literal_interval_flagged():
    r = rpc_ci(Elasticity(1.0, 0.1), _gap(0.02, 0.002), method="paper_literal")
    assert r.ci_high - r.rpc == pytest.approx(0.27718, abs=1e-5)
    assert "dimensionally_inconsistent" in r.flags


def test_zero_denominator():
    with pytest.raises(RpcError):
        rpc_ci(Elasticity(0.0, 0.1), _gap(0.02, 0.002))
    assert rpc_ci(Elasticity(0.0, 0.0), _gap(0.02, 0.0)).rpc == 0.0


def test_subsistence():
    assert rpc_subsistence(1.0, 0.02, -0.01, 2.0, 1.0) == pytest.approx(0.04)
    assert rpc_subsistence(1.0, 0.02, -0.01, 2.0, 0.0) == pytest.approx(0.03)
    with pytest.raises(RpcError):
        rpc_subsistence(1.0, 0.02, -0.01, 1.0, 1.0)


def test_preferences_validation():
    with pytest.raises(RpcError):
        CesPreferences(1.0, 0.5)
    with pytest.raises(RpcError):
        CesPreferences(0.5, 0.0)
    assert CesPreferences(0.5, 1.0).cobb_douglas


def test_sigma_interval():
    point, (lo, hi) = sigma_interval(Elasticity(0.5, 0.1))
    assert point == 2.0
    assert lo == pytest.approx(1 / (0.5 + 1.959963984540054 * 0.1))
    assert hi == pytest.approx(1 / (0.5 - 1.959963984540054 * 0.1))


prefs = st.builds(CesPreferences, st.floats(0.05, 0.95), st.floats(0.2, 5.0))
levels = st.floats(0.1, 10.0)
moderate = st.floats(0.5, 5.0)


@given(st.builds(CesPreferences, st.floats(0.1, 0.9), st.floats(0.5, 5.0)), moderate, moderate)
@example(CesPreferences(0.5, 0.99999), 1.0, 0.5)  # just outside the Cobb-Douglas band
def test_mrs_matches_utility_derivatives(p, C, E):
    h = 1e-6
    u_c = (ces_utility(C * (1 + h), E, p) - ces_utility(C * (1 - h), E, p)) / (2 * h * C)
    u_e = (ces_utility(C, E * (1 + h), p) - ces_utility(C, E * (1 - h), p)) / (2 * h * E)
    assert mrs(C, E, p) == pytest.approx(u_e / u_c, rel=1e-6)


@given(prefs, levels, levels, st.floats(0.1, 10.0))
def test_mrs_homogeneous_of_degree_zero(p, C, E, lam):
    assert mrs(lam * C, lam * E, p) == pytest.approx(mrs(C, E, p), rel=1e-10)


@given(prefs, levels, levels, st.floats(-0.05, 0.05), st.floats(-0.05, 0.05))
def test_rate_gap_equals_rpc(p, C, E, g_c, g_e):
    eta = ces_marginal_elasticities(C, E, p)
    r_c, r_e = ramsey_rates(0.01, *eta, g_c, g_e)
    assert r_c - r_e == pytest.approx((g_c - g_e) / p.sigma, abs=1e-12)


@given(prefs, st.floats(-0.05, 0.05), st.floats(-0.05, 0.05), st.floats(0, 50))
def test_path_derivative_equals_rpc(p, g_c, g_e, t):
    fd = rpc_from_paths(p, g_c, g_e, t)
    assert fd == pytest.approx(rpc_point(1.0 / p.sigma, g_c - g_e), abs=1e-8)


def test_cobb_douglas_utility():
    p = CesPreferences(0.5, 1.0)
    assert ces_utility(4.0, 1.0, p) == pytest.approx(2.0)
    assert math.isclose(mrs(4.0, 1.0, p), 4.0)
