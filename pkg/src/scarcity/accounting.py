"""Present values of WTP streams and natural-capital uplift factors."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rpc import Z95, rpc_point

COMPOUNDING = ("continuous", "discrete_annual")


@dataclass(frozen=True)
class DiscountingConfig:
    rate: float = 0.04
    horizon: float = 100.0
    compounding: str = "continuous"

    def __post_init__(self):
        if self.compounding not in COMPOUNDING:
            raise ValueError("compounding must be one of %s" % (COMPOUNDING,))
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if not math.isfinite(self.horizon) and not self.rate > 0:
            raise ValueError("an infinite horizon needs a positive discount rate")


@dataclass(frozen=True)
class UpliftResult:
    uplift: float
    rpc_used: float
    config: DiscountingConfig

    def to_dict(self):
        return {"uplift": self.uplift, "rpc": self.rpc_used, "rate": self.config.rate,
                "horizon": self.config.horizon, "compounding": self.config.compounding}


def wtp_path(base, rpc, horizon, step=1.0):
    """Times and values of ``base * exp(rpc * t)`` on ``[0, horizon]``."""
    if not base > 0:
        raise ValueError("base WTP must be positive")
    n = int(math.floor(horizon / step + 1e-9))
    t = np.arange(n + 1) * step
    return t, base * np.exp(rpc * t)


def present_value(base, growth, config):
    """Present value of a WTP stream growing at ``growth`` per year.

    Continuous: ``base * int_0^T exp((growth - r) t) dt``. Discrete annual:
    ``base * sum_{t=1..T} ((1 + growth) / (1 + r))**t`` (payments in arrears).
    """
    r, T = config.rate, config.horizon
    if config.compounding == "continuous":
        k = growth - r
        if k == 0:
            return base * T
        if math.isinf(T):
            if k >= 0:
                return math.inf
            return base / -k
        return base * math.expm1(k * T) / k
    q = (1.0 + growth) / (1.0 + r)
    n = int(round(T))
    if q == 1.0:
        return base * n
    return base * q * (q ** n - 1.0) / (q - 1.0)


def uplift_factor(rpc, config):
    """``PV(growth = rpc) / PV(growth = 0) - 1``."""
    if rpc == 0:
        return UpliftResult(0.0, 0.0, config)
    return UpliftResult(present_value(1.0, rpc, config) / present_value(1.0, 0.0, config) - 1.0,
                        rpc, config)


def uplift_curve(xi_grid, xi_se, gap, configs):
    """Uplift along a grid of elasticities, with a band from ``xi +/- 1.96 se``.

    Returns one dict per (config, xi) with keys ``xi, rpc, uplift, ci_low,
    ci_high, rate, horizon``.
    """
    xi_grid = [float(x) for x in xi_grid]
    if any(b < a for a, b in zip(xi_grid, xi_grid[1:])):
        raise ValueError("xi grid must be ascending")
    rows = []
    for cfg in configs:
        for xi in xi_grid:
            ends = [uplift_factor(rpc_point(x, gap), cfg).uplift
                    for x in (xi - Z95 * xi_se, xi + Z95 * xi_se)]
            rpc = rpc_point(xi, gap)
            rows.append({
                "xi": xi, "rpc": rpc, "uplift": uplift_factor(rpc, cfg).uplift,
                "ci_low": min(ends), "ci_high": max(ends),
                "rate": cfg.rate, "horizon": cfg.horizon,
            })
    return rows


def adjust_account(baseline_value, uplift):
    if baseline_value < 0:
        raise ValueError("baseline value must be non-negative")
    u = uplift.uplift if isinstance(uplift, UpliftResult) else float(uplift)
    return baseline_value * (1.0 + u)


def adjust_portfolio(accounts):
    """Apply per-account uplifts to a set of natural-capital accounts.

    ``accounts`` is a list of dicts with ``name``, ``baseline`` and
    ``uplift`` (0 for unadjusted accounts). Returns the rows with ``share``
    and ``adjusted`` filled in plus the total relative change, which equals
    the share-weighted sum of uplifts.
    """
    total = math.fsum(a["baseline"] for a in accounts)
    if total <= 0:
        raise ValueError("portfolio baseline must be positive")
    rows = []
    for a in accounts:
        u = a.get("uplift", 0.0)
        u = u.uplift if isinstance(u, UpliftResult) else float(u)
        rows.append({"name": a["name"], "baseline": a["baseline"],
                     "share": a["baseline"] / total, "uplift": u,
                     "adjusted": adjust_account(a["baseline"], u)})
    change = math.fsum(r["share"] * r["uplift"] for r in rows)
    return rows, change
