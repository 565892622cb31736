"""Converter/line dynamics and the equilibrium solve.

The network solution is cross-checked against an independent
backward/forward-sweep power flow (tests/oracles.py) rather than the
package's own Newton iteration.
"""

import json
import math

import numpy as np
import pytest

from gridcharge.dynamics import (OperatingPoint, SingularStateError,
                                 SystemModel, evcs_rhs, line_rhs, saturate,
                                 solve_equilibrium)
from gridcharge.network import EvcsParams, LineSpec, load_grid

from oracles import bfs_power_flow


def test_saturate_clamps():
    assert saturate(0.5) == 0.5
    assert saturate(1.7) == 1.0
    assert saturate(-3.0) == -1.0


def _params(**over):
    base = dict(bus=2, rating_w=50e3, directional="unidirectional",
                l_g=2e-3, l_c=1e-3, c_f=3e-5, c_dc=5.6e-3, v_dc_star=800.0,
                kappa_p1=1.71, kappa_i1=672.66, kappa_p2=0.5, kappa_i2=5.0,
                kappa_p3=25.0, kappa_i3=500.0, kappa_p4=25.0, kappa_i4=500.0)
    base.update(over)
    return EvcsParams(**base)


def test_evcs_rhs_grid_current_hand_arithmetic():
    # d-axis grid current: di/dt = (v_d - v_c^d + omega L_g i^gq) / L_g
    # with v_d=100, v_c^d=90, omega=377 (zeta carries it, v_q=0), i^gq=5
    p = _params(l_g=2e-3)
    x = np.zeros(12)
    x[1] = 377.0  # zeta -> omega = kappa_p1 * v_q + zeta = 377
    x[3] = 5.0  # i^gq
    x[6] = 90.0  # v_c^d
    x[11] = 800.0  # v_dc
    dx = evcs_rhs(x, np.array([100.0, 0.0]), np.zeros(3), 0.0, p,
                  omega_bar=60.0, omega_c=377.0)
    expected = (100.0 - 90.0 + 377.0 * 2e-3 * 5.0) / 2e-3
    assert dx[2] == pytest.approx(expected, rel=1e-12)


def test_evcs_rhs_rejects_collapsed_dc_bus():
    p = _params()
    x = np.zeros(12)
    with pytest.raises(SingularStateError):
        evcs_rhs(x, np.array([100.0, 0.0]), np.zeros(3), 0.0, p, 60.0, 377.0)


def test_line_rhs_equal_voltages_zero_current():
    ln = LineSpec(from_bus=1, to_bus=2, r=0.09, l=1.2e-4)
    v = np.array([300.0, -20.0])
    assert line_rhs(np.zeros(2), v, v, ln, 377.0) == pytest.approx([0.0, 0.0])


def test_line_rhs_d_axis_drive():
    ln = LineSpec(from_bus=1, to_bus=2, r=0.09, l=1.2e-4)
    dx = line_rhs(np.zeros(2), np.array([310.0, 0.0]), np.array([300.0, 0.0]),
                  ln, 377.0)
    assert dx[0] == pytest.approx(10.0 / 1.2e-4, rel=1e-12)
    assert dx[1] == pytest.approx(0.0)


def test_equilibrium_residuals_and_power(grid_p3, op_p3, demand_p3):
    model = SystemModel(grid_p3)
    f = model.f(op_p3.x_star, op_p3.y_star, np.zeros(9), demand_p3)
    g = model.g(op_p3.x_star, op_p3.y_star)
    scale = max(1.0, np.abs(op_p3.x_star).max())
    assert np.max(np.abs(f)) <= 1e-8 * scale * grid_p3.omega_c
    assert np.max(np.abs(g)) <= 1e-6  # W
    # stations draw their rated power within 2%
    assert op_p3.p_e == pytest.approx([50e3, 50e3, 100e3], rel=0.02)


def test_equilibrium_dc_buses_at_setpoint(grid_p3, op_p3):
    v_dc = op_p3.x_star[11:12 * grid_p3.n_evcs:12]
    assert v_dc == pytest.approx([800.0, 800.0, 800.0], rel=1e-5)


def test_duty_cycles_unsaturated(grid_p3, op_p3):
    md, mq = SystemModel(grid_p3).duty_cycles(op_p3.x_star, op_p3.y_star)
    assert np.all(np.abs(md) < 1.0)
    assert np.all(np.abs(mq) < 1.0)


def test_delta_ie_only_moves_dc_bus(grid_p3, op_p3, demand_p3):
    model = SystemModel(grid_p3)
    u = np.zeros(9)
    f0 = model.f(op_p3.x_star, op_p3.y_star, u, demand_p3)
    u[2] = 1.0  # di^e of station 1
    f1 = model.f(op_p3.x_star, op_p3.y_star, u, demand_p3)
    diff = f1 - f0
    c_dc = grid_p3.evcs[0].c_dc
    assert diff[11] == pytest.approx(-1.0 / c_dc, rel=1e-9)
    diff[11] = 0.0
    assert np.max(np.abs(diff)) == 0.0


def test_no_load_grid_flat_equilibrium(tmp_path):
    spec = {
        "omega_bar_rad_s": 60.0,
        "omega_c_rad_s": 2 * math.pi * 60.0,
        "v_pcc_kv": 12.66,
        "buses": [{"id": 1, "kind": "PCC"}, {"id": 2, "kind": "Load"},
                  {"id": 3, "kind": "Load"}],
        "lines": [{"from": 1, "to": 2, "r_ohm": 0.09, "l_henry": 1.2e-4},
                  {"from": 2, "to": 3, "r_ohm": 0.05, "l_henry": 0.8e-4}],
        "evcs": [],
    }
    path = tmp_path / "flat.json"
    path.write_text(json.dumps(spec))
    grid = load_grid(path)
    op = solve_equilibrium(grid, np.array([]))
    assert op.bus_voltage_magnitudes() == pytest.approx([grid.v_pcc] * 3)
    assert np.max(np.abs(op.x_star)) < 1e-9  # line currents


def test_no_evcs_profile_matches_sweep_oracle(grid33):
    op = solve_equilibrium(grid33, np.array([]))
    v_ref = np.abs(bfs_power_flow(grid33))
    v = op.bus_voltage_magnitudes()
    assert np.max(np.abs(v - v_ref)) / grid33.v_pcc < 1e-4


def test_p3_profile_matches_sweep_oracle(grid_p3, op_p3):
    v_ref = np.abs(bfs_power_flow(grid_p3, evcs_p_w=op_p3.p_e,
                                  evcs_q_var=op_p3.q_e))
    v = op_p3.bus_voltage_magnitudes()
    assert np.max(np.abs(v - v_ref)) / grid_p3.v_pcc < 1e-4


def test_warm_start_reaches_same_point(grid_p3, op_p3, demand_p3):
    op2 = solve_equilibrium(grid_p3, demand_p3 * 0.98, init=op_p3)
    assert op2.p_e == pytest.approx(op_p3.p_e * 0.98, rel=0.05)
    # re-solving the original setpoint from the shifted start returns home
    op3 = solve_equilibrium(grid_p3, demand_p3, init=op2)
    assert op3.x_star == pytest.approx(op_p3.x_star, rel=1e-4, abs=1e-3)


def test_operating_point_round_trip(op_p3):
    clone = OperatingPoint.from_dict(op_p3.to_dict())
    assert np.array_equal(clone.x_star, op_p3.x_star)
    assert np.array_equal(clone.y_star, op_p3.y_star)
    assert clone.p_g == op_p3.p_g
