"""Static network model: buses, lines, charging stations, and the per-bus
voltage stability index.

Everything in this module is plain data plus read-only queries; the grid is
immutable after :func:`load_grid` and safe to share between workers.

Units are SI throughout (ohm, henry, volt, watt).  d-q voltages elsewhere in
the package are phase-peak amplitudes; the stability index normalizes by the
nominal feeder voltage so its value is dimensionless.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

__all__ = [
    "GridError",
    "BusSpec",
    "LineSpec",
    "EvcsParams",
    "GridModel",
    "VsiReport",
    "load_grid",
    "bundled_grid_path",
    "sending_bus",
    "compute_vsi",
]


class GridError(ValueError):
    """Raised for malformed or inconsistent grid description files."""


@dataclass(frozen=True)
class BusSpec:
    id: int
    kind: str  # "PCC" | "EV" | "Load"
    p_load: float  # W consumed by the non-EV load
    q_load: float  # VAr


@dataclass(frozen=True)
class LineSpec:
    from_bus: int  # sending end
    to_bus: int  # receiving end
    r: float  # ohm
    l: float  # henry

    def reactance(self, omega_bar: float) -> float:
        """Series reactance, ohm.  omega_bar is the base frequency in Hz."""
        return 2.0 * math.pi * omega_bar * self.l


@dataclass(frozen=True)
class EvcsParams:
    bus: int
    rating_w: float
    directional: str  # "unidirectional" | "bidirectional"
    l_g: float  # H, grid-side filter inductance
    l_c: float  # H, converter-side filter inductance
    c_f: float  # F, filter capacitance
    c_dc: float  # F, DC-link capacitance
    v_dc_star: float  # V, DC-bus setpoint
    kappa_p1: float
    kappa_i1: float
    kappa_p2: float
    kappa_i2: float
    kappa_p3: float
    kappa_i3: float
    kappa_p4: float
    kappa_i4: float
    i_lower: float = 0.0  # A, lowest allowable charging setpoint
    v_ac_nom: float = 400.0 * math.sqrt(2.0 / 3.0)  # V, converter-side nominal phase peak

    def __post_init__(self):
        for name in ("l_g", "l_c", "c_f", "c_dc"):
            if getattr(self, name) <= 0.0:
                raise GridError(f"EVCS at bus {self.bus}: {name} must be positive")
        if self.v_dc_star <= 0.0:
            raise GridError(f"EVCS at bus {self.bus}: v_dc_star must be positive")
        if self.directional not in ("unidirectional", "bidirectional"):
            raise GridError(f"EVCS at bus {self.bus}: unknown directional mode")
        if self.i_lower < 0.0 and self.directional == "unidirectional":
            # tolerated: the projection clamps to max(i_lower, 0) downstream
            pass


@dataclass(frozen=True)
class GridModel:
    buses: tuple[BusSpec, ...]
    lines: tuple[LineSpec, ...]
    evcs: tuple[EvcsParams, ...]
    omega_bar: float  # Hz, base frequency
    omega_c: float  # rad/s, common angular frequency
    v_pcc: float  # V, PCC phase-peak voltage magnitude
    _parent: dict[int, int] = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_evcs(self) -> int:
        return len(self.evcs)

    @property
    def evcs_buses(self) -> tuple[int, ...]:
        return tuple(e.bus for e in self.evcs)

    def bus(self, bus_id: int) -> BusSpec:
        return self.buses[bus_id - 1]

    def line_between(self, k: int, h: int) -> LineSpec:
        for ln in self.lines:
            if {ln.from_bus, ln.to_bus} == {k, h}:
                return ln
        raise GridError(f"no line between buses {k} and {h}")

    def total_load_w(self) -> float:
        return sum(b.p_load for b in self.buses)


@dataclass(frozen=True)
class VsiReport:
    values: dict[int, float]  # receiving bus id -> index value (raw)
    v_min: float
    critical_bus: int
    out_of_range: tuple[int, ...]  # buses whose raw value fell outside [0, 1]


def _phase_peak_from_kv_ll(kv_ll: float) -> float:
    """Line-to-line kV (RMS) to phase-peak volts."""
    return kv_ll * 1e3 * math.sqrt(2.0 / 3.0)


def _build_parent_map(n: int, lines) -> dict[int, int]:
    """Parent of each bus in the tree rooted at bus 1.

    Raises GridError when the line set is not a spanning tree.
    """
    if len(lines) != n - 1:
        raise GridError(
            f"non-tree topology: {len(lines)} lines for {n} buses (need {n - 1})"
        )
    adj: dict[int, list[int]] = {b: [] for b in range(1, n + 1)}
    for ln in lines:
        adj[ln.from_bus].append(ln.to_bus)
        adj[ln.to_bus].append(ln.from_bus)
    parent: dict[int, int] = {}
    seen = {1}
    stack = [1]
    while stack:
        k = stack.pop()
        for h in adj[k]:
            if h not in seen:
                seen.add(h)
                parent[h] = k
                stack.append(h)
    if len(seen) != n:
        raise GridError("non-tree topology: network is not connected from bus 1")
    return parent


def _evcs_from_entry(entry: dict) -> EvcsParams:
    params = dict(entry.get("params", {}))
    v_ac_kv = params.pop("v_ac_kv", 0.4)
    known = dict(
        bus=int(entry["bus"]),
        rating_w=float(entry["rating_kw"]) * 1e3,
        directional=str(entry.get("directional", "unidirectional")).lower(),
        l_g=float(params.pop("l_g_henry")),
        l_c=float(params.pop("l_c_henry")),
        c_f=float(params.pop("c_f_farad")),
        c_dc=float(params.pop("c_dc_farad")),
        v_dc_star=float(params.pop("v_dc_star_v")),
        v_ac_nom=_phase_peak_from_kv_ll(float(v_ac_kv)),
    )
    for g in ("p1", "i1", "p2", "i2", "p3", "i3", "p4", "i4"):
        known[f"kappa_{g}"] = float(params.pop(f"kappa_{g}"))
    if "i_lower_a" in params:
        known["i_lower"] = float(params.pop("i_lower_a"))
    if params:
        raise GridError(f"unknown EVCS parameters: {sorted(params)}")
    return EvcsParams(**known)


def load_grid(path) -> GridModel:
    """Read a grid description (JSON) and validate it.

    The file carries arrays ``buses``, ``lines``, ``evcs`` and the scalars
    ``omega_bar_rad_s``, ``omega_c_rad_s``, ``v_pcc_kv``.  Loads are given in
    kW / kVAr and converted to SI here.
    """
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise GridError(f"cannot read grid file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise GridError(f"grid file {path} is not valid JSON: {exc}") from exc

    try:
        buses = tuple(
            BusSpec(
                id=int(b["id"]),
                kind=str(b["kind"]),
                p_load=float(b.get("p_load_kw", 0.0)) * 1e3,
                q_load=float(b.get("q_load_kvar", 0.0)) * 1e3,
            )
            for b in raw["buses"]
        )
        lines = tuple(
            LineSpec(
                from_bus=int(ln["from"]),
                to_bus=int(ln["to"]),
                r=float(ln["r_ohm"]),
                l=float(ln["l_henry"]),
            )
            for ln in raw["lines"]
        )
        evcs = tuple(_evcs_from_entry(e) for e in raw.get("evcs", []))
        omega_bar = float(raw["omega_bar_rad_s"])
        omega_c = float(raw["omega_c_rad_s"])
        v_pcc = _phase_peak_from_kv_ll(float(raw["v_pcc_kv"]))
    except KeyError as exc:
        raise GridError(f"grid file missing required field {exc}") from exc

    ids = [b.id for b in buses]
    if len(set(ids)) != len(ids):
        raise GridError("duplicate bus ids")
    n = len(buses)
    if sorted(ids) != list(range(1, n + 1)):
        raise GridError("bus ids must be 1..n")
    if n < 2:
        raise GridError("need at least 2 buses")
    if buses[0].kind != "PCC":
        raise GridError("bus 1 must be the PCC")
    if any(b.kind == "PCC" for b in buses[1:]):
        raise GridError("exactly one PCC bus allowed (bus 1)")
    for ln in lines:
        if ln.from_bus == ln.to_bus:
            raise GridError(f"line {ln.from_bus}-{ln.to_bus} is a self loop")
        if ln.l <= 0.0:
            raise GridError(f"line {ln.from_bus}-{ln.to_bus}: inductance must be positive")
        if not (1 <= ln.from_bus <= n and 1 <= ln.to_bus <= n):
            raise GridError(f"line {ln.from_bus}-{ln.to_bus} references unknown bus")
    parent = _build_parent_map(n, lines)

    seen_evcs = set()
    for e in evcs:
        if not (1 <= e.bus <= n):
            raise GridError(f"EVCS placed on unknown bus {e.bus}")
        if e.bus in seen_evcs:
            raise GridError(f"two EVCSs on bus {e.bus}")
        seen_evcs.add(e.bus)
        if buses[e.bus - 1].kind != "EV":
            raise GridError(f"EVCS bus {e.bus} must have kind 'EV'")
    for b in buses:
        if b.kind == "EV" and b.id not in seen_evcs:
            raise GridError(f"bus {b.id} is marked EV but has no EVCS attached")
        if b.kind == "Load" and (b.p_load < 0.0 or b.q_load < 0.0):
            raise GridError(f"bus {b.id}: load must be nonnegative")

    return GridModel(
        buses=buses,
        lines=lines,
        evcs=evcs,
        omega_bar=omega_bar,
        omega_c=omega_c,
        v_pcc=v_pcc,
        _parent=parent,
    )


def bundled_grid_path(name: str):
    """Path to one of the packaged grid fixtures, e.g. ``ieee33``."""
    return resources.files("gridcharge.data") / f"{name}.json"


def sending_bus(grid: GridModel, h: int) -> int:
    """Unique parent of receiving bus ``h`` on the path toward bus 1."""
    if h == 1:
        raise GridError("bus 1 is the PCC and has no sending bus")
    try:
        return grid._parent[h]
    except KeyError:
        raise GridError(f"unknown bus {h}") from None


def compute_vsi(grid: GridModel, op, i_e_star) -> VsiReport:
    """Voltage stability index at every receiving bus.

    ``op`` is a converged operating point consistent with ``i_e_star`` (the
    per-EVCS charging current setpoints, A).  Per receiving bus h with sending
    bus k:

        v_kpu^4 - 4*((P_h + vdc_h*ie_h)*r - Q_h*X)^2
                - 4*((P_h + vdc_h*ie_h)*r + Q_h*X) * v_hpu^2

    with the power-resistance products normalized by the nominal line-to-line
    voltage squared, so every term is dimensionless.  Values outside [0, 1]
    are reported raw and flagged.
    """
    i_e_star = np.asarray(i_e_star, dtype=float)
    if i_e_star.shape != (grid.n_evcs,):
        raise GridError(
            f"i_e_star must have length {grid.n_evcs}, got {i_e_star.shape}"
        )
    # nominal line-to-line voltage squared (phase peak -> LL RMS: * 3/2)
    v_ll_sq = grid.v_pcc**2 * 1.5
    vmag = op.bus_voltage_magnitudes()
    v_pu = vmag / grid.v_pcc

    ev_power = {e.bus: e.v_dc_star * i_e_star[j] for j, e in enumerate(grid.evcs)}

    values: dict[int, float] = {}
    out = []
    for h in range(2, grid.n_bus + 1):
        k = sending_bus(grid, h)
        ln = grid.line_between(k, h)
        x = ln.reactance(grid.omega_bar)
        bus = grid.bus(h)
        p_term = (bus.p_load + ev_power.get(h, 0.0)) * ln.r / v_ll_sq
        q_term = bus.q_load * x / v_ll_sq
        val = (
            v_pu[k - 1] ** 4
            - 4.0 * (p_term - q_term) ** 2
            - 4.0 * (p_term + q_term) * v_pu[h - 1] ** 2
        )
        values[h] = val
        if not (0.0 <= val <= 1.0):
            out.append(h)

    critical = min(values, key=values.get)
    return VsiReport(
        values=values,
        v_min=values[critical],
        critical_bus=critical,
        out_of_range=tuple(out),
    )
