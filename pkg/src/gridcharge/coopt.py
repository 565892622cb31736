"""Joint optimization of charging-current setpoints and the LQR gain.

Projected gradient descent over the per-station setpoints alpha, with the
feedback gain re-synthesized at every evaluated point.  The objective mixes
three terms:

  J1  squared H2 norm of the reduced closed loop's response to the plug-in
      disturbance (the initial DC-bus deviation, scaled with the setpoint)
  J2  quadratic incentive penalty for backing off the demanded currents,
      weighted by the per-session energy prices
  J3  worst-case voltage-stability shortfall max_h beta_h |1 - V_h|

The H2 gradient is built from setpoint perturbations: for each coordinate the
transfer-function difference quotient (G_k - G)/eps is realized as a parallel
state-space system, and the inner product with the nominal loop comes out of
one Sylvester equation per coordinate.  The stability-index gradient is a
forward difference reusing the same perturbed equilibria.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_sylvester
from sklearn.base import BaseEstimator

from .control import (closed_loop, h2_norm_sq, lqr_gain, performance_output,
                      solve_lyapunov)
from .dynamics import EquilibriumError, OperatingPoint, SystemModel, solve_equilibrium
from .linearization import default_weights, linearize, reduce_model
from .network import GridModel, VsiReport, compute_vsi

__all__ = [
    "ArmijoParams",
    "OptimizationConfig",
    "OptimizationResult",
    "GridPlant",
    "PlantEval",
    "ClosedLoopRealization",
    "DeltaRealization",
    "AugmentedSystem",
    "default_demand",
    "plug_in_disturbance",
    "feasible_box",
    "project_box",
    "delta_realization",
    "build_augmented",
    "h2_gradient",
    "h2_gradient_dense",
    "perturbed_system",
    "objective_terms",
    "armijo_step",
    "run_algorithm1",
    "run_algorithm2",
    "write_trace_csv",
    "write_result_json",
    "SetpointCoOptimizer",
    "StabilityAwareCoOptimizer",
]

# reference current for the plug-in disturbance scaling (A); a station whose
# setpoint equals this sees a unit initial DC-bus deviation
ALPHA_REF = 200.0


@dataclass
class ArmijoParams:
    """Backtracking line-search constants."""

    c1: float = 1e-4
    shrink: float = 0.5
    alpha_init: float | None = None  # None: scaled from the gradient each time
    max_backtracks: int = 30


@dataclass
class OptimizationConfig:
    """Weights, bounds, and solver knobs shared by both descent variants.

    ``gamma`` is the single trade-off weight of the two-term objective
    (H2 vs. incentive); ``gamma1``/``gamma2`` are the incentive and
    voltage-stability weights of the three-term objective.
    """

    i_demand: np.ndarray  # A, signed (discharge negative)
    gamma: float = 0.0
    gamma1: float = 0.0
    gamma2: float = 0.0
    beta: np.ndarray | None = None  # $/kWh incentive weights, default tiers
    beta_si: np.ndarray | None = None  # (n-1) per-receiving-bus VSI weights
    i_lower: np.ndarray | None = None  # A, overrides the grid's floors
    backoff_limit: float = 0.2  # largest accepted relative rate reduction
    epsilon: float = 0.1  # A, setpoint perturbation
    tau: float = 0.05  # A, iterate-movement stopping tolerance
    max_iters: int = 200
    armijo: ArmijoParams = field(default_factory=ArmijoParams)
    step_scale: float = 10.0  # A, first-trial move when alpha_init is auto
    q: np.ndarray | None = None
    r: np.ndarray | None = None
    x_hat_0: np.ndarray | None = None  # fixed disturbance; None: setpoint-scaled
    alpha_ref: float = ALPHA_REF
    reduction: str = "auto"


def default_demand(grid: GridModel) -> np.ndarray:
    """Rated current per station, A; discharge-capable stations contracted
    at their full discharge rating (negative)."""
    out = np.empty(grid.n_evcs)
    for j, e in enumerate(grid.evcs):
        sign = -1.0 if e.directional == "bidirectional" else 1.0
        out[j] = sign * e.rating_w / e.v_dc_star
    return out


def default_beta(grid: GridModel, i_demand, peak: bool = False) -> np.ndarray:
    """Tiered energy prices at the demanded power magnitudes."""
    from .incentive import incentive_rate

    i_demand = np.asarray(i_demand, dtype=float)
    return np.array([
        incentive_rate(abs(i_demand[j]) * e.v_dc_star / 1e3, peak)
        for j, e in enumerate(grid.evcs)
    ])


def plug_in_disturbance(alpha, alpha_ref: float = ALPHA_REF) -> np.ndarray:
    """Initial deviation on each DC-bus coordinate, proportional to the
    setpoint: a plug-in transient scales with the current being switched."""
    alpha = np.asarray(alpha, dtype=float)
    x0 = np.zeros(7 * alpha.size)
    x0[6::7] = alpha / alpha_ref
    return x0


def feasible_box(grid: GridModel, config: OptimizationConfig):
    """Per-station setpoint bounds (lo, hi), A.

    Charging stations may back off at most ``backoff_limit`` below the
    demanded rate (the owner's acceptability floor); discharge contracts may
    shed at most the same fraction of the contracted injection, down from the
    full rating.
    """
    d = np.asarray(config.i_demand, dtype=float)
    if d.shape != (grid.n_evcs,):
        raise ValueError(f"i_demand must have length {grid.n_evcs}")
    if config.i_lower is not None:
        floor = np.asarray(config.i_lower, dtype=float)
    else:
        floor = np.array([e.i_lower for e in grid.evcs])
    floor = np.array([
        max(f, 0.0) if e.directional == "unidirectional" else f
        for f, e in zip(floor, grid.evcs)
    ])
    keep = 1.0 - config.backoff_limit
    lo = np.where(d > 0.0, np.maximum(floor, keep * d), floor)
    hi = np.where(d > 0.0, d, keep * d)
    lo = np.where(d == 0.0, 0.0, lo)
    hi = np.where(d == 0.0, 0.0, hi)
    if np.any(lo > hi + 1e-12):
        raise ValueError("infeasible setpoint box (floor above demand)")
    return lo, hi


def project_box(i, bounds) -> np.ndarray:
    """Elementwise clamp onto the feasible box."""
    lo, hi = bounds
    return np.clip(np.asarray(i, dtype=float), lo, hi)


# --------------------------------------------------------------------------
# plant evaluation with caching and warm starts
# --------------------------------------------------------------------------


@dataclass
class PlantEval:
    """Everything derived from one setpoint vector."""

    alpha: np.ndarray
    op: OperatingPoint
    vsi: VsiReport
    red: object = None  # ReducedLinearModel, when dynamics were requested
    k_gain: np.ndarray | None = None
    a_cl: np.ndarray | None = None
    c: np.ndarray | None = None
    j_r1: float | None = None

    def realization(self) -> "ClosedLoopRealization":
        if self.a_cl is None:
            raise ValueError("dynamics were not evaluated at this setpoint")
        return ClosedLoopRealization(a_cl=self.a_cl, c=self.c,
                                     x0=self.red.x_hat_0)


class GridPlant:
    """Cached equilibrium / linearization / LQR evaluations for one grid.

    Equilibria are keyed by the rounded setpoint vector and warm-started from
    the nearest cached point, so the descent and its finite-difference probes
    share Newton work.
    """

    def __init__(self, grid: GridModel, q=None, r=None, x_hat_0=None,
                 alpha_ref: float = ALPHA_REF, reduction: str = "auto"):
        self.grid = grid
        self.model = SystemModel(grid)
        p = grid.n_evcs
        q_def, r_def = default_weights(7 * p, 3 * p)
        self.q = q_def if q is None else np.asarray(q, dtype=float)
        self.r = r_def if r is None else np.asarray(r, dtype=float)
        self.x_hat_0 = None if x_hat_0 is None else np.asarray(x_hat_0, float)
        self.alpha_ref = alpha_ref
        self.reduction = reduction
        self._evals: dict[tuple, PlantEval] = {}

    @staticmethod
    def _key(alpha) -> tuple:
        return tuple(float(v) for v in np.round(np.asarray(alpha, float), 9))

    def _warm_start(self, alpha) -> OperatingPoint | None:
        best, best_d = None, np.inf
        for ev in self._evals.values():
            d = np.max(np.abs(ev.alpha - alpha))
            if d < best_d:
                best, best_d = ev.op, d
        return best

    def disturbance(self, alpha) -> np.ndarray:
        if self.x_hat_0 is not None:
            return self.x_hat_0
        return plug_in_disturbance(alpha, self.alpha_ref)

    def evaluate(self, alpha, dynamics: bool = True) -> PlantEval:
        alpha = np.asarray(alpha, dtype=float)
        key = self._key(alpha)
        ev = self._evals.get(key)
        if ev is not None and (not dynamics or ev.a_cl is not None):
            return ev

        if ev is None:
            op = solve_equilibrium(self.grid, alpha,
                                   init=self._warm_start(alpha),
                                   model=self.model)
            vsi = compute_vsi(self.grid, op, alpha)
            ev = PlantEval(alpha=alpha.copy(), op=op, vsi=vsi)
            self._evals[key] = ev

        if dynamics and ev.a_cl is None:
            full = linearize(self.grid, ev.op, model=self.model)
            red = reduce_model(full, q=self.q, r=self.r,
                               x_hat_0=self.disturbance(alpha),
                               method=self.reduction)
            k, _ = lqr_gain(red.a, red.b, red.q, red.r)
            a_cl = closed_loop(red, k)
            if np.any(np.linalg.eigvals(a_cl).real >= 0.0):
                raise EquilibriumError(
                    f"closed loop unstable at setpoint {alpha}")
            c = performance_output(red, k)
            ev.red, ev.k_gain, ev.a_cl, ev.c = red, k, a_cl, c
            ev.j_r1 = h2_norm_sq(a_cl, c, red.x_hat_0)
        return ev


# --------------------------------------------------------------------------
# gradient machinery
# --------------------------------------------------------------------------


@dataclass
class ClosedLoopRealization:
    """Closed loop driven by an initial deviation: G(s) = C (sI-A)^{-1} x0."""

    a_cl: np.ndarray
    c: np.ndarray
    x0: np.ndarray


@dataclass
class DeltaRealization:
    """Parallel-difference realization of (G_k - G)/eps for coordinate k."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    index: int = 0


def delta_realization(base: ClosedLoopRealization,
                      pert: ClosedLoopRealization,
                      epsilon: float, index: int = 0) -> DeltaRealization:
    n_p, n_b = pert.a_cl.shape[0], base.a_cl.shape[0]
    a = np.zeros((n_p + n_b, n_p + n_b))
    a[:n_p, :n_p] = pert.a_cl
    a[n_p:, n_p:] = base.a_cl
    b = np.concatenate([pert.x0, base.x0]) / epsilon
    c = np.hstack([pert.c, -base.c])
    return DeltaRealization(a=a, b=b, c=c, index=index)


@dataclass
class AugmentedSystem:
    """Block assembly of the nominal loop and all coordinate differences."""

    cal_a: np.ndarray
    cal_b1: np.ndarray
    cal_b2: np.ndarray
    cal_c: np.ndarray
    deltas: list


def build_augmented(base: ClosedLoopRealization, deltas) -> AugmentedSystem:
    n0 = base.a_cl.shape[0]
    sizes = [d.a.shape[0] for d in deltas]
    dim = n0 + sum(sizes)
    p = len(deltas)
    cal_a = np.zeros((dim, dim))
    cal_b1 = np.zeros(dim)
    cal_b2 = np.zeros((dim, p))
    cal_c = np.zeros((base.c.shape[0], dim))

    cal_a[:n0, :n0] = base.a_cl
    cal_b1[:n0] = base.x0
    cal_c[:, :n0] = base.c
    off = n0
    for j, d in enumerate(deltas):
        if d.c.shape[0] != base.c.shape[0]:
            raise ValueError("output dimension mismatch between blocks")
        nd = d.a.shape[0]
        cal_a[off:off + nd, off:off + nd] = d.a
        cal_b2[off:off + nd, j] = d.b
        cal_c[:, off:off + nd] = d.c
        off += nd
    return AugmentedSystem(cal_a=cal_a, cal_b1=cal_b1, cal_b2=cal_b2,
                           cal_c=cal_c, deltas=list(deltas))


def h2_gradient(base: ClosedLoopRealization, deltas) -> np.ndarray:
    """d/d alpha_k of the squared H2 norm: 2 <G, (G_k - G)/eps>.

    The cross inner product needs only the coupling block of the augmented
    Lyapunov solution, one Sylvester equation per coordinate.
    """
    grad = np.zeros(len(deltas))
    ctc_base = base.c
    for j, d in enumerate(deltas):
        l_cross = solve_sylvester(d.a.T, base.a_cl, -d.c.T @ ctc_base)
        grad[j] = 2.0 * d.b @ (l_cross @ base.x0)
    return grad


def h2_gradient_dense(aug: AugmentedSystem) -> np.ndarray:
    """Same gradient from one Lyapunov solve on the full augmented system.

    Exists as a cross-check on the blockwise route; cost grows cubically in
    the stacked dimension, so the descent itself uses :func:`h2_gradient`.
    """
    l = solve_lyapunov(aug.cal_a, aug.cal_c.T @ aug.cal_c)
    return 2.0 * aug.cal_b2.T @ (l @ aug.cal_b1)


def perturbed_system(plant: GridPlant, alpha, k: int, epsilon: float,
                     dynamics: bool = True):
    """Evaluate the plant at alpha + eps e_k.

    Returns ``(eval, delta, eps_used)``; ``delta`` is the difference-quotient
    realization against the base point (None when dynamics are skipped).  A
    failed equilibrium retries once with eps/10, then propagates.
    """
    alpha = np.asarray(alpha, dtype=float)
    base = plant.evaluate(alpha, dynamics=dynamics)
    last_exc = None
    for eps in (epsilon, epsilon / 10.0):
        pert_alpha = alpha.copy()
        pert_alpha[k] += eps
        try:
            ev = plant.evaluate(pert_alpha, dynamics=dynamics)
        except EquilibriumError as exc:
            last_exc = exc
            continue
        delta = None
        if dynamics:
            delta = delta_realization(base.realization(), ev.realization(),
                                      eps, index=k)
        return ev, delta, eps
    raise EquilibriumError(
        f"no equilibrium at setpoint perturbed in coordinate {k}: {last_exc}")


# --------------------------------------------------------------------------
# objective and line search
# --------------------------------------------------------------------------


def vsi_shortfall(vsi: VsiReport, beta_si) -> float:
    """Weighted worst-case distance of the stability index from 1."""
    vals = np.array([vsi.values[h] for h in sorted(vsi.values)])
    return float(np.max(np.asarray(beta_si, float) * np.abs(1.0 - vals)))


def objective_terms(ev: PlantEval, i_demand, beta, beta_si):
    """(J1, J2, J3) at one evaluated setpoint; J1 is None without dynamics."""
    d = np.asarray(i_demand, dtype=float)
    diff = ev.alpha - d
    j2 = float(diff @ (np.asarray(beta, float) * diff))
    j3 = vsi_shortfall(ev.vsi, beta_si)
    return ev.j_r1, j2, j3


def armijo_step(j0: float, grad, point, project, evaluate,
                params: ArmijoParams, step_scale: float = 10.0):
    """Backtracking search along the projected negative gradient.

    Sufficient decrease is measured on the actual (projected) move, which
    reduces to the classic c1 * a * ||g||^2 condition away from the bounds.
    Returns ``(step, candidate, j_candidate, stalled)``; a stall (zero
    gradient, fully pinned iterate, or exhausted backtracking) keeps the
    point and reports step 0.
    """
    grad = np.asarray(grad, dtype=float)
    point = np.asarray(point, dtype=float)
    g_inf = np.max(np.abs(grad)) if grad.size else 0.0
    if not np.isfinite(g_inf) or g_inf == 0.0:
        return 0.0, point, j0, True
    a = params.alpha_init if params.alpha_init is not None else step_scale / g_inf
    for _ in range(params.max_backtracks + 1):
        cand = project(point - a * grad)
        move = cand - point
        if not np.any(move):
            return 0.0, point, j0, True
        try:
            j_c = evaluate(cand)
        except EquilibriumError:
            a *= params.shrink
            continue
        if j_c <= j0 - params.c1 / a * float(move @ move):
            return a, cand, j_c, False
        a *= params.shrink
    return 0.0, point, j0, True


# --------------------------------------------------------------------------
# descent loop
# --------------------------------------------------------------------------


@dataclass
class OptimizationResult:
    i_e_star: np.ndarray
    k_gain: np.ndarray
    iterations: int
    converged: bool
    trace: list  # per-iteration dicts: j, j_r1, j_r2, j_r3, step, grad_norm
    h2_initial: float
    h2_final: float
    v_min: float
    operating_point: OperatingPoint


def _resolve_weights_algorithm1(config: OptimizationConfig):
    g = float(config.gamma)
    if not 0.0 <= g <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    return 1.0 - g, g, 0.0


def _resolve_weights_algorithm2(config: OptimizationConfig):
    g1, g2 = float(config.gamma1), float(config.gamma2)
    if g1 < 0.0 or g2 < 0.0 or g1 + g2 > 1.0 + 1e-12:
        raise ValueError("need gamma1, gamma2 >= 0 and gamma1 + gamma2 <= 1")
    return 1.0 - g1 - g2, g1, g2


def _n_workers() -> int:
    try:
        return max(1, int(os.environ.get("GRIDCHARGE_THREADS", "1")))
    except ValueError:
        return 1


def _descend(grid: GridModel, config: OptimizationConfig,
             w_h2: float, w_inc: float, w_vsi: float) -> OptimizationResult:
    plant = GridPlant(grid, q=config.q, r=config.r, x_hat_0=config.x_hat_0,
                      alpha_ref=config.alpha_ref, reduction=config.reduction)
    d = np.asarray(config.i_demand, dtype=float)
    bounds = feasible_box(grid, config)
    beta = (default_beta(grid, d) if config.beta is None
            else np.asarray(config.beta, dtype=float))
    beta_si = (np.ones(grid.n_bus - 1) if config.beta_si is None
               else np.asarray(config.beta_si, dtype=float))
    need_dyn_grad = w_h2 > 0.0

    def total(ev: PlantEval) -> float:
        j1, j2, j3 = objective_terms(ev, d, beta, beta_si)
        return w_h2 * (j1 or 0.0) + w_inc * j2 + w_vsi * j3

    alpha = project_box(d, bounds)
    trace: list[dict] = []
    converged = False
    h2_initial = None
    workers = _n_workers()

    it = 0
    for it in range(1, config.max_iters + 1):
        ev = plant.evaluate(alpha, dynamics=True)
        j1, j2, j3 = objective_terms(ev, d, beta, beta_si)
        j = w_h2 * j1 + w_inc * j2 + w_vsi * j3
        if h2_initial is None:
            h2_initial = j1

        grad = w_inc * 2.0 * beta * (alpha - d)
        if need_dyn_grad or w_vsi > 0.0:
            p = grid.n_evcs
            probe = lambda k: perturbed_system(plant, alpha, k,
                                               config.epsilon,
                                               dynamics=need_dyn_grad)
            if workers > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    probes = list(pool.map(probe, range(p)))
            else:
                probes = [probe(k) for k in range(p)]
            if need_dyn_grad:
                deltas = [pr[1] for pr in probes]
                grad = grad + w_h2 * h2_gradient(ev.realization(), deltas)
            if w_vsi > 0.0:
                for k, (ev_k, _, eps_k) in enumerate(probes):
                    j3_k = vsi_shortfall(ev_k.vsi, beta_si)
                    grad[k] += w_vsi * (j3_k - j3) / eps_k

        step, cand, _, _ = armijo_step(
            j, grad, alpha, lambda v: project_box(v, bounds),
            lambda v: total(plant.evaluate(v, dynamics=need_dyn_grad)),
            config.armijo, config.step_scale,
        )
        trace.append({
            "iteration": it, "j": j, "j_r1": j1, "j_r2": j2, "j_r3": j3,
            "step": step, "grad_norm": float(np.max(np.abs(grad))),
        })
        delta_move = cand - alpha
        alpha = cand
        if np.linalg.norm(delta_move) < config.tau:
            converged = True
            break

    final = plant.evaluate(alpha, dynamics=True)
    return OptimizationResult(
        i_e_star=alpha,
        k_gain=final.k_gain,
        iterations=it,
        converged=converged,
        trace=trace,
        h2_initial=float(h2_initial),
        h2_final=float(final.j_r1),
        v_min=final.vsi.v_min,
        operating_point=final.op,
    )


def run_algorithm1(config: OptimizationConfig, grid: GridModel) -> OptimizationResult:
    """Two-term descent: (1 - gamma) H2 + gamma incentive penalty."""
    w_h2, w_inc, w_vsi = _resolve_weights_algorithm1(config)
    return _descend(grid, config, w_h2, w_inc, w_vsi)


def run_algorithm2(config: OptimizationConfig, grid: GridModel) -> OptimizationResult:
    """Three-term descent with the voltage-stability shortfall added."""
    w_h2, w_inc, w_vsi = _resolve_weights_algorithm2(config)
    return _descend(grid, config, w_h2, w_inc, w_vsi)


# --------------------------------------------------------------------------
# export
# --------------------------------------------------------------------------

_TRACE_COLUMNS = ("iteration", "j", "j_r1", "j_r2", "j_r3", "step", "grad_norm")


def write_trace_csv(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=_TRACE_COLUMNS)
        w.writeheader()
        for row in trace:
            w.writerow({k: row[k] for k in _TRACE_COLUMNS})


def write_result_json(result: OptimizationResult, path) -> None:
    with open(path, "w") as fh:
        json.dump({
            "i_e_star": result.i_e_star.tolist(),
            "k_gain": result.k_gain.tolist(),
            "iterations": result.iterations,
            "converged": result.converged,
            "h2_initial": result.h2_initial,
            "h2_final": result.h2_final,
            "v_min": result.v_min,
        }, fh, indent=1, sort_keys=True)


# --------------------------------------------------------------------------
# estimator-style front ends
# --------------------------------------------------------------------------


class _CoOptimizerBase(BaseEstimator):
    def _shared_config(self, grid: GridModel) -> dict:
        d = (default_demand(grid) if self.i_demand is None
             else np.asarray(self.i_demand, dtype=float))
        return dict(
            i_demand=d,
            beta=self.beta,
            epsilon=self.epsilon,
            tau=self.tau,
            max_iters=self.max_iters,
            backoff_limit=self.backoff_limit,
            step_scale=self.step_scale,
            alpha_ref=self.alpha_ref,
        )

    def _store(self, result: OptimizationResult):
        self.result_ = result
        self.i_e_star_ = result.i_e_star
        self.k_gain_ = result.k_gain
        self.trace_ = result.trace
        self.converged_ = result.converged
        self.n_iter_ = result.iterations
        return self


class SetpointCoOptimizer(_CoOptimizerBase):
    """Fits the charging setpoints and LQR gain for one trade-off weight.

    ``gamma = 0`` minimizes the closed-loop H2 response alone; ``gamma = 1``
    keeps the demanded currents and only synthesizes the gain.
    """

    def __init__(self, gamma: float = 0.0, i_demand=None, beta=None,
                 epsilon: float = 0.1, tau: float = 0.05, max_iters: int = 200,
                 backoff_limit: float = 0.2, step_scale: float = 10.0,
                 alpha_ref: float = ALPHA_REF):
        self.gamma = gamma
        self.i_demand = i_demand
        self.beta = beta
        self.epsilon = epsilon
        self.tau = tau
        self.max_iters = max_iters
        self.backoff_limit = backoff_limit
        self.step_scale = step_scale
        self.alpha_ref = alpha_ref

    def fit(self, grid: GridModel):
        config = OptimizationConfig(gamma=self.gamma,
                                    **self._shared_config(grid))
        return self._store(run_algorithm1(config, grid))


class StabilityAwareCoOptimizer(_CoOptimizerBase):
    """Three-term variant: H2, incentive cost, and voltage-stability margin."""

    def __init__(self, gamma1: float = 0.0, gamma2: float = 0.0,
                 i_demand=None, beta=None, beta_si=None,
                 epsilon: float = 0.1, tau: float = 0.05, max_iters: int = 200,
                 backoff_limit: float = 0.2, step_scale: float = 10.0,
                 alpha_ref: float = ALPHA_REF):
        self.gamma1 = gamma1
        self.gamma2 = gamma2
        self.i_demand = i_demand
        self.beta = beta
        self.beta_si = beta_si
        self.epsilon = epsilon
        self.tau = tau
        self.max_iters = max_iters
        self.backoff_limit = backoff_limit
        self.step_scale = step_scale
        self.alpha_ref = alpha_ref

    def fit(self, grid: GridModel):
        config = OptimizationConfig(gamma1=self.gamma1, gamma2=self.gamma2,
                                    beta_si=self.beta_si,
                                    **self._shared_config(grid))
        return self._store(run_algorithm2(config, grid))
