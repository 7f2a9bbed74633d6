"""CES preferences, relative price changes and dual discount rates."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .growth import GrowthEstimate

Z95 = 1.959963984540054
COBB_DOUGLAS_BAND = 1e-6


class RpcError(ValueError):
    pass


@dataclass(frozen=True)
class CesPreferences:
    """Share ``alpha`` on market consumption, elasticity of substitution ``sigma``."""

    alpha: float
    sigma: float

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise RpcError("alpha must lie in (0, 1), got %r" % self.alpha)
        if not self.sigma > 0:
            raise RpcError("sigma must be positive, got %r" % self.sigma)

    @property
    def cobb_douglas(self):
        return abs(self.sigma - 1.0) < COBB_DOUGLAS_BAND


@dataclass(frozen=True)
class Elasticity:
    xi: float
    se: float = 0.0

    def __post_init__(self):
        if self.se < 0:
            raise RpcError("standard error must be non-negative")


@dataclass(frozen=True)
class RpcResult:
    rpc: float
    ci_low: float
    ci_high: float
    method: str = "delta_product"
    flags: tuple = ()

    def to_dict(self):
        return {"rpc": self.rpc, "ci_low": self.ci_low, "ci_high": self.ci_high,
                "method": self.method, "flags": list(self.flags)}


def _check_positive(**kw):
    for name, value in kw.items():
        if not value > 0:
            raise RpcError("%s must be positive, got %r" % (name, value))


def ces_utility(C, E, p):
    _check_positive(C=C, E=E)
    if p.cobb_douglas:
        return C ** p.alpha * E ** (1.0 - p.alpha)
    rho = (p.sigma - 1.0) / p.sigma
    # log form stays accurate as rho -> 0, where the plain power loses digits
    inner = math.log1p(p.alpha * math.expm1(rho * math.log(C))
                       + (1.0 - p.alpha) * math.expm1(rho * math.log(E)))
    return math.exp(inner / rho)


def mrs(C, E, p):
    """Marginal rate of substitution ``U_E / U_C``."""
    _check_positive(C=C, E=E)
    return (1.0 - p.alpha) / p.alpha * (C / E) ** (1.0 / p.sigma)


def ces_marginal_elasticities(C, E, p):
    """``(eta_CC, eta_CE, eta_EE, eta_EC)`` for CES utility at ``(C, E)``.

    Signs follow the dual-rate convention, so ``r_C = delta + eta_CC g_C +
    eta_CE g_E`` is the consumption discount rate.
    """
    _check_positive(C=C, E=E)
    rho = (p.sigma - 1.0) / p.sigma
    a = p.alpha * C ** rho
    b = (1.0 - p.alpha) * E ** rho
    s_c, s_e = a / (a + b), b / (a + b)
    inv = 1.0 / p.sigma
    return s_e * inv, -s_e * inv, s_c * inv, -s_c * inv


def rpc_point(xi, gap):
    xi = xi.xi if isinstance(xi, Elasticity) else float(xi)
    g = gap.g if isinstance(gap, GrowthEstimate) else float(gap)
    return xi * g


def rpc_ci(xi, gap, method="delta_product", z=Z95):
    """Point estimate and 95% interval for ``xi * (g_C - g_E)``.

    ``delta_product`` scales the combined relative error by the point
    estimate. ``paper_literal`` uses the bare relative error as the half
    width, which mixes a rate with a dimensionless number; it is kept for
    reproducing published tables and is flagged.
    """
    rel2 = 0.0
    if xi.se > 0 or gap.se > 0:
        if xi.xi == 0 or gap.g == 0:
            raise RpcError("relative-error interval undefined at zero; "
                           "propagate the variance of the product directly")
        rel2 = (xi.se / xi.xi) ** 2 + (gap.se / gap.g) ** 2
    point = xi.xi * gap.g
    if method == "delta_product":
        half = z * abs(point) * math.sqrt(rel2)
        flags = ()
    elif method == "paper_literal":
        half = z * math.sqrt(rel2)
        flags = ("dimensionally_inconsistent",)
    else:
        raise RpcError("unknown CI method %r" % method)
    return RpcResult(point, point - half, point + half, method, flags)


def ramsey_rates(delta, eta_cc, eta_ce, eta_ee, eta_ec, g_c, g_e):
    """Good-specific discount rates ``(r_C, r_E)``."""
    r_c = delta + eta_cc * g_c + eta_ce * g_e
    r_e = delta + eta_ee * g_e + eta_ec * g_c
    return r_c, r_e


def rpc_from_paths(p, g_c, g_e, t, h=1e-4, c0=1.0, e0=1.0):
    """Centered finite difference of ``ln mrs`` along exponential paths at time ``t``."""
    def log_mrs(s):
        return math.log(mrs(c0 * math.exp(g_c * s), e0 * math.exp(g_e * s), p))
    return (log_mrs(t + h) - log_mrs(t - h)) / (2.0 * h)


def rpc_subsistence(xi, g_c, g_e, E, E_bar):
    """RPC when utility requires ecosystem services above a subsistence level ``E_bar``."""
    if E_bar < 0:
        raise RpcError("subsistence level must be non-negative")
    if not E > E_bar:
        raise RpcError("E=%r at or below the subsistence level %r; relative price undefined"
                       % (E, E_bar))
    if E_bar == 0:
        return xi * (g_c - g_e)
    return xi * (g_c - g_e * E / (E - E_bar))


def elasticity_to_sigma(xi):
    if not xi > 0:
        raise RpcError("income elasticity must be positive to map to sigma, got %r" % xi)
    return 1.0 / xi


def sigma_interval(xi):
    """Elasticity-of-substitution point and interval implied by ``xi`` and its SE."""
    lo, hi = xi.xi - Z95 * xi.se, xi.xi + Z95 * xi.se
    bounds = sorted(1.0 / v for v in (lo, hi) if v > 0)
    return elasticity_to_sigma(xi.xi), (bounds[0] if len(bounds) == 2 else 0.0,
                                        bounds[-1] if bounds else np.inf)
