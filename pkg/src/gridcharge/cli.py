"""Command-line front end: optimization runs, simulations, and table export.

Every mode reads a grid description (JSON) and writes plain CSV / JSON for
downstream plotting; no plotting engine is bundled.  Exit codes: 0 success,
64 bad usage, 66 unreadable input, 70 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .control import closed_loop
from .coopt import (OptimizationConfig, default_demand, run_algorithm1,
                    run_algorithm2, write_result_json, write_trace_csv)
from .dynamics import EquilibriumError, SingularStateError, solve_equilibrium
from .incentive import DemandSubmission, build_offers
from .linearization import eigen_report, linearize, reduce_model, write_modal_csv
from .network import GridError, compute_vsi, load_grid
from .simulate import SimulationError, load_scenario, run_simulation

EXIT_OK = 0
EXIT_USAGE = 64
EXIT_INPUT = 66
EXIT_NUMERIC = 70


def _csv_floats(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",") if v.strip() != ""])
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {exc}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridcharge",
        description="EV-charging grid co-optimization toolkit",
    )
    sub = parser.add_subparsers(dest="mode", required=True)

    def add_common(p, demand_help="demanded currents (A, comma-separated); "
                                  "defaults to the station ratings"):
        p.add_argument("--grid", required=True, help="grid description JSON")
        p.add_argument("--demand", type=_csv_floats, default=None,
                       help=demand_help)
        p.add_argument("--out", default=".", help="output directory")

    def add_opt(p):
        add_common(p)
        p.add_argument("--config", default=None,
                       help="JSON file with optimizer settings (flags win)")
        p.add_argument("--epsilon", type=float, default=None)
        p.add_argument("--tau", type=float, default=None)
        p.add_argument("--max-iters", type=int, default=None)
        p.add_argument("--backoff", type=float, default=None,
                       help="largest relative rate reduction (default 0.2)")

    p1 = sub.add_parser("optimize1", help="two-term setpoint/gain descent")
    add_opt(p1)
    p1.add_argument("--gamma", type=float, default=0.0)

    p2 = sub.add_parser("optimize2", help="three-term descent with the "
                                          "voltage-stability margin")
    add_opt(p2)
    p2.add_argument("--gamma1", type=float, default=0.0)
    p2.add_argument("--gamma2", type=float, default=0.0)

    pv = sub.add_parser("vsi", help="voltage stability indices at one setpoint")
    add_common(pv)

    pe = sub.add_parser("eig", help="modal report of the linearized model")
    add_common(pe)
    pe.add_argument("--reduced", action="store_true",
                    help="report the reduced physical-state model")

    ps = sub.add_parser("simulate", help="nonlinear time simulation")
    add_common(ps, demand_help="standing setpoints (A); defaults to ratings")
    ps.add_argument("--config", required=True, help="scenario JSON")
    ps.add_argument("--gain", default=None,
                    help="result JSON carrying the feedback gain (optional)")

    po = sub.add_parser("offers", help="wait-and-save offer table")
    po.add_argument("--energy", type=_csv_floats, required=True, help="kWh")
    po.add_argument("--rate", type=_csv_floats, required=True,
                    help="demanded kW")
    po.add_argument("--opt-rate", type=_csv_floats, required=True,
                    help="optimized kW")
    po.add_argument("--beta", type=_csv_floats, default=None, help="$/kWh")
    po.add_argument("--peak", action="store_true")
    po.add_argument("--out", default=".", help="output directory")
    return parser


def _load_optimizer_config(args, grid) -> OptimizationConfig:
    raw = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            raw = json.load(fh)
    demand = args.demand if args.demand is not None else \
        raw.get("i_demand", None)
    config = OptimizationConfig(
        i_demand=np.asarray(demand, float) if demand is not None
        else default_demand(grid),
    )
    for key in ("epsilon", "tau", "max_iters", "backoff_limit", "step_scale",
                "alpha_ref", "gamma", "gamma1", "gamma2", "beta", "beta_si"):
        if key in raw:
            val = raw[key]
            setattr(config, key, np.asarray(val, float)
                    if isinstance(val, list) else val)
    if args.epsilon is not None:
        config.epsilon = args.epsilon
    if args.tau is not None:
        config.tau = args.tau
    if args.max_iters is not None:
        config.max_iters = args.max_iters
    if args.backoff is not None:
        config.backoff_limit = args.backoff
    return config


def _cmd_optimize(args, algorithm) -> int:
    grid = load_grid(args.grid)
    config = _load_optimizer_config(args, grid)
    if args.mode == "optimize1":
        config.gamma = args.gamma
        result = run_algorithm1(config, grid)
    else:
        config.gamma1 = args.gamma1
        config.gamma2 = args.gamma2
        result = run_algorithm2(config, grid)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_result_json(result, out / "result.json")
    write_trace_csv(result.trace, out / "trace.csv")
    print(f"converged={result.converged} iterations={result.iterations} "
          f"h2 {result.h2_initial:.6e} -> {result.h2_final:.6e} "
          f"v_min={result.v_min:.4f}")
    return EXIT_OK


def _demand_or_default(args, grid) -> np.ndarray:
    if args.demand is not None:
        if args.demand.size != grid.n_evcs:
            raise ValueError(f"--demand needs {grid.n_evcs} values")
        return args.demand
    return default_demand(grid)


def _cmd_vsi(args) -> int:
    grid = load_grid(args.grid)
    alpha = _demand_or_default(args, grid)
    op = solve_equilibrium(grid, alpha)
    report = compute_vsi(grid, op, alpha)
    payload = {
        "v_min": report.v_min,
        "critical_bus": report.critical_bus,
        "values": {str(b): v for b, v in sorted(report.values.items())},
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "vsi.json", "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
    print(f"v_min={report.v_min:.4f} at bus {report.critical_bus}")
    return EXIT_OK


def _cmd_eig(args) -> int:
    grid = load_grid(args.grid)
    alpha = _demand_or_default(args, grid)
    op = solve_equilibrium(grid, alpha)
    full = linearize(grid, op)
    if args.reduced:
        red = reduce_model(full)
        report = eigen_report(red.a, red.state_names)
    else:
        report = eigen_report(full.a, full.state_names)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_modal_csv(report, out / "modes.csv")
    lam = report.eigenvalues[0]
    print(f"{report.eigenvalues.size} modes; least damped "
          f"{lam.real:.3f}{lam.imag:+.3f}j (zeta={report.damping_ratios[0]:.3f})")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    grid = load_grid(args.grid)
    scenario = load_scenario(args.config)
    base = _demand_or_default(args, grid)
    gain = None
    if args.gain:
        with open(args.gain) as fh:
            gain = np.asarray(json.load(fh)["k_gain"], float)
    traj = run_simulation(grid, scenario, base, k_gain=gain)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    traj.to_csv(out / "trajectory.csv")
    traj.write_events_json(out / "events.json")
    print(f"{traj.times.size} samples over {traj.times[-1]:.3f} s, "
          f"{len(traj.events)} events")
    return EXIT_OK


def _cmd_offers(args) -> int:
    sub = DemandSubmission(
        energy_kwh=args.energy,
        p_demand_kw=args.rate,
        beta_price=args.beta,
        peak=np.full(args.energy.size, bool(args.peak)),
    )
    table = build_offers(sub, args.opt_rate)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table.to_csv(out / "offers.csv")
    table.to_json(out / "offers.json")
    print(f"total incentive ${table.total_incentive:.2f} "
          f"over {len(table.rows)} sessions")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE

    try:
        if args.mode in ("optimize1", "optimize2"):
            return _cmd_optimize(args, args.mode)
        if args.mode == "vsi":
            return _cmd_vsi(args)
        if args.mode == "eig":
            return _cmd_eig(args)
        if args.mode == "simulate":
            return _cmd_simulate(args)
        if args.mode == "offers":
            return _cmd_offers(args)
        parser.error(f"unknown mode {args.mode}")
    except (GridError, FileNotFoundError, IsADirectoryError,
            json.JSONDecodeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (EquilibriumError, SingularStateError, SimulationError,
            ValueError, np.linalg.LinAlgError) as exc:
        print(f"computation failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
