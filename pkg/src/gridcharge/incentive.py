"""Wait-and-save offer arithmetic.

Each charging session that accepts a reduced power rate takes longer to
deliver the same energy; the operator compensates the owner with a dollar
incentive proportional to the relative waiting time:

    duration_min  = 60 E / |P|
    wait          = duration(reduced) - duration(demanded)
    incentive     = base_price * wait / duration(demanded)
    final_price   = base_price - incentive

All rows are kept at full precision; rounding (0.1 min, $0.01) happens only
when a table is rendered.  Discharge sessions (negative power) use the same
formulas on magnitudes, with the fee read as a payment to the owner.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict

import numpy as np

__all__ = [
    "PRICE_TIERS",
    "DemandSubmission",
    "OfferRow",
    "OfferTable",
    "incentive_rate",
    "demand_currents",
    "build_offers",
]

# ($/kWh) price tiers keyed by demanded power magnitude:
# (rating cap in kW inclusive, off-peak rate, peak rate)
PRICE_TIERS = ((50.0, 0.40, 0.50), (float("inf"), 0.50, 0.60))


def incentive_rate(p_kw: float, peak: bool = False, tiers=PRICE_TIERS) -> float:
    """Energy price ($/kWh) for a session demanded at |p_kw|."""
    p = abs(float(p_kw))
    for cap, off_peak, on_peak in tiers:
        if p <= cap:
            return on_peak if peak else off_peak
    raise ValueError(f"no price tier covers {p} kW")


def demand_currents(p_ed_kw, v_dc_star) -> np.ndarray:
    """Demanded charging currents, A: power (kW) over the DC-bus setpoint (V).

    Sign-preserving, so contracted discharge (negative kW) maps to a negative
    current setpoint.
    """
    v = np.asarray(v_dc_star, dtype=float)
    if np.any(v <= 0.0):
        raise ValueError("v_dc_star must be positive")
    return np.asarray(p_ed_kw, dtype=float) * 1e3 / v


@dataclass(frozen=True)
class DemandSubmission:
    """Per-session demand data collected before the optimization runs."""

    energy_kwh: np.ndarray
    p_demand_kw: np.ndarray  # negative for contracted discharge
    beta_price: np.ndarray = None  # $/kWh; defaults from the price tiers
    peak: np.ndarray = None  # per-session flag

    def __post_init__(self):
        e = np.atleast_1d(np.asarray(self.energy_kwh, dtype=float))
        p = np.atleast_1d(np.asarray(self.p_demand_kw, dtype=float))
        if e.shape != p.shape:
            raise ValueError("energy_kwh and p_demand_kw must have equal length")
        if np.any(e <= 0.0):
            raise ValueError("energy_kwh must be positive")
        if np.any(p == 0.0):
            raise ValueError("p_demand_kw must be nonzero")
        peak = (np.zeros(e.size, dtype=bool) if self.peak is None
                else np.atleast_1d(np.asarray(self.peak, dtype=bool)))
        if self.beta_price is None:
            beta = np.array([incentive_rate(pk, bool(fl))
                             for pk, fl in zip(p, peak)])
        else:
            beta = np.atleast_1d(np.asarray(self.beta_price, dtype=float))
            if np.any(beta <= 0.0):
                raise ValueError("beta_price must be positive")
        object.__setattr__(self, "energy_kwh", e)
        object.__setattr__(self, "p_demand_kw", p)
        object.__setattr__(self, "beta_price", beta)
        object.__setattr__(self, "peak", peak)

    @property
    def n_sessions(self) -> int:
        return self.energy_kwh.size


@dataclass
class OfferRow:
    """One negotiation-table row, full precision."""

    energy_kwh: float
    p_demand_kw: float
    p_star_kw: float
    t_demand_min: float  # duration at the demanded rate
    t_star_min: float  # duration at the reduced rate
    wait_min: float
    price_demand: float  # $ at the demanded rate
    incentive: float  # $
    price_star: float  # $ after the incentive
    decision: str = "Pending"


@dataclass
class OfferTable:
    rows: list = field(default_factory=list)

    @property
    def total_incentive(self) -> float:
        return sum(r.incentive for r in self.rows)

    def rounded(self) -> list:
        """Rows at the table's displayed precision (0.1 min, $0.01)."""
        out = []
        for r in self.rows:
            d = asdict(r)
            for key in ("t_demand_min", "t_star_min", "wait_min"):
                d[key] = round(d[key], 1)
            for key in ("price_demand", "incentive", "price_star"):
                d[key] = round(d[key], 2)
            out.append(d)
        return out

    _COLUMNS = ("energy_kwh", "p_demand_kw", "p_star_kw", "t_star_min",
                "t_demand_min", "wait_min", "incentive", "price_star",
                "price_demand", "decision")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=self._COLUMNS, extrasaction="ignore")
            w.writeheader()
            for d in self.rounded():
                w.writerow(d)

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({"rows": self.rounded(),
                       "total_incentive": round(self.total_incentive, 2)},
                      fh, indent=1, sort_keys=True)


def build_offers(sub: DemandSubmission, p_e_star_kw) -> OfferTable:
    """Assemble the offer table from demanded and optimized power rates."""
    p_star = np.atleast_1d(np.asarray(p_e_star_kw, dtype=float))
    if p_star.shape != sub.p_demand_kw.shape:
        raise ValueError("p_e_star_kw must match the submission length")
    if np.any(p_star == 0.0):
        raise ValueError("optimized power rate must be nonzero")
    if np.any(np.sign(p_star) != np.sign(sub.p_demand_kw)):
        raise ValueError("optimized rate must not flip the power direction")
    if np.any(np.abs(p_star) > np.abs(sub.p_demand_kw) * (1.0 + 1e-12)):
        raise ValueError("optimized rate must not exceed the demanded rate")

    rows = []
    for e, pd_, ps, beta in zip(sub.energy_kwh, sub.p_demand_kw, p_star,
                                sub.beta_price):
        t_d = 60.0 * e / abs(pd_)
        t_s = 60.0 * e / abs(ps)
        wait = t_s - t_d
        price_d = e * beta
        inc = price_d * max(wait, 0.0) / t_d
        rows.append(OfferRow(
            energy_kwh=e, p_demand_kw=pd_, p_star_kw=ps,
            t_demand_min=t_d, t_star_min=t_s, wait_min=wait,
            price_demand=price_d, incentive=inc, price_star=price_d - inc,
        ))
    return OfferTable(rows=rows)
