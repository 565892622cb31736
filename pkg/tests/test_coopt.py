"""Setpoint/gain descent: box projection, line search, and the H2 gradient."""

import numpy as np
import pytest
from sklearn.base import clone

from gridcharge.control import h2_norm_sq, solve_lyapunov
from gridcharge.coopt import (ArmijoParams, ClosedLoopRealization,
                              OptimizationConfig, PlantEval,
                              SetpointCoOptimizer, StabilityAwareCoOptimizer,
                              armijo_step, build_augmented, default_demand,
                              delta_realization, feasible_box, h2_gradient,
                              h2_gradient_dense, objective_terms, project_box,
                              run_algorithm1, run_algorithm2, vsi_shortfall,
                              write_result_json, write_trace_csv)
from gridcharge.network import VsiReport


def test_default_demand_values(grid_p3, grid_p10):
    assert default_demand(grid_p3) == pytest.approx([62.5, 62.5, 125.0])
    d10 = default_demand(grid_p10)
    # contracted discharge is negative at the full rating
    assert d10[3] == pytest.approx(-218.75)
    assert d10[0] == pytest.approx(62.5)


def test_box_unidirectional_floor_clamps_to_zero(grid_p3):
    # a negative candidate on a charge-only station projects to 0 once the
    # backoff window is opened all the way down
    config = OptimizationConfig(i_demand=np.array([62.5, 62.5, 125.0]),
                                backoff_limit=1.0,
                                i_lower=np.array([-10.0, -10.0, -10.0]))
    bounds = feasible_box(grid_p3, config)
    out = project_box(np.array([-5.0, 30.0, 200.0]), bounds)
    assert out == pytest.approx([0.0, 30.0, 125.0])


def test_box_bidirectional_floor(grid_p10):
    config = OptimizationConfig(i_demand=default_demand(grid_p10),
                                backoff_limit=1.0)
    lo, hi = feasible_box(grid_p10, config)
    # station 4 contracts -218.75 A (-175 kW at 800 V)
    cand = default_demand(grid_p10)
    cand[3] = -220.0
    out = project_box(cand, (lo, hi))
    assert out[3] == pytest.approx(-218.75)
    # discharge may be shed at most up to zero injection here
    assert hi[3] == pytest.approx(0.0)


def test_box_backoff_window(grid_p3):
    config = OptimizationConfig(i_demand=np.array([62.5, 62.5, 125.0]),
                                backoff_limit=0.2)
    lo, hi = feasible_box(grid_p3, config)
    assert lo == pytest.approx([50.0, 50.0, 100.0])
    assert hi == pytest.approx([62.5, 62.5, 125.0])


def test_box_rejects_wrong_length(grid_p3):
    config = OptimizationConfig(i_demand=np.array([62.5, 125.0]))
    with pytest.raises(ValueError):
        feasible_box(grid_p3, config)


def test_armijo_hand_trace():
    # J(x) = x^2 at x = 1: the full step lands on -1 with no decrease, one
    # backtrack lands on the minimizer
    params = ArmijoParams(alpha_init=1.0)
    step, cand, j_c, stalled = armijo_step(
        1.0, np.array([2.0]), np.array([1.0]), lambda v: v,
        lambda v: float(v @ v), params)
    assert step == pytest.approx(0.5)
    assert cand == pytest.approx([0.0])
    assert j_c == pytest.approx(0.0)
    assert not stalled


def test_armijo_zero_gradient_stalls():
    step, cand, j_c, stalled = armijo_step(
        3.0, np.zeros(2), np.ones(2), lambda v: v,
        lambda v: float(v @ v), ArmijoParams())
    assert stalled and step == 0.0 and j_c == 3.0


def test_armijo_pinned_iterate_stalls():
    # gradient pushes out of the box; projection returns the same point
    params = ArmijoParams(alpha_init=1.0)
    step, cand, _, stalled = armijo_step(
        1.0, np.array([-2.0]), np.array([1.0]),
        lambda v: np.clip(v, 0.0, 1.0), lambda v: float(v @ v), params)
    assert stalled
    assert cand == pytest.approx([1.0])


def _random_realization(rng, n, m=2):
    a = rng.normal(size=(n, n))
    a -= (np.max(np.linalg.eigvals(a).real) + 1.0) * np.eye(n)
    c = rng.normal(size=(m, n))
    x0 = rng.normal(size=n)
    return ClosedLoopRealization(a_cl=a, c=c, x0=x0)


def test_identical_systems_give_zero_delta():
    rng = np.random.default_rng(5)
    base = _random_realization(rng, 4)
    d = delta_realization(base, base, epsilon=0.1)
    l = solve_lyapunov(d.a, d.c.T @ d.c)
    assert abs(d.b @ l @ d.b) < 1e-8


def test_augmented_dimensions_and_structure():
    rng = np.random.default_rng(9)
    base = _random_realization(rng, 21)
    perts = [_random_realization(rng, 21) for _ in range(3)]
    deltas = [delta_realization(base, p, 0.1, index=k)
              for k, p in enumerate(perts)]
    aug = build_augmented(base, deltas)
    assert aug.cal_a.shape == (147, 147)  # 21 + 3 * 42
    assert np.allclose(aug.cal_a[:21, :21], base.a_cl)
    assert np.allclose(aug.cal_b1[:21], base.x0)
    assert np.max(np.abs(aug.cal_b1[21:])) == 0.0
    assert aug.cal_b2.shape == (147, 3)


def test_blockwise_gradient_matches_dense():
    rng = np.random.default_rng(21)
    base = _random_realization(rng, 5)
    perts = [_random_realization(rng, 5) for _ in range(3)]
    deltas = [delta_realization(base, p, 0.05, index=k)
              for k, p in enumerate(perts)]
    grad = h2_gradient(base, deltas)
    dense = h2_gradient_dense(build_augmented(base, deltas))
    assert grad == pytest.approx(dense, rel=1e-9)


def test_gradient_on_scalar_closed_form_plant():
    # a(alpha) = -alpha, c = 1, x0 = 1: J = 1/(2 alpha), dJ/dalpha = -1/(2 a^2)
    alpha, eps = 2.0, 1e-5

    def realization(a):
        return ClosedLoopRealization(a_cl=np.array([[-a]]),
                                     c=np.array([[1.0]]),
                                     x0=np.array([1.0]))

    delta = delta_realization(realization(alpha), realization(alpha + eps),
                              eps)
    grad = h2_gradient(realization(alpha), [delta])
    assert grad[0] == pytest.approx(-1.0 / (2.0 * alpha**2), rel=0.01)


def test_gradient_matches_central_differences_on_synthetic_plant():
    # A(alpha) = A0 + sum alpha_k E_k, fixed C and x0
    rng = np.random.default_rng(33)
    n, p = 6, 3
    a0 = rng.normal(size=(n, n))
    a0 -= (np.max(np.linalg.eigvals(a0).real) + 2.0) * np.eye(n)
    e_k = [0.05 * rng.normal(size=(n, n)) for _ in range(p)]
    c = rng.normal(size=(2, n))
    x0 = rng.normal(size=n)
    alpha0 = rng.normal(size=p) * 0.1

    def realization(alpha):
        a = a0 + sum(ak * ek for ak, ek in zip(alpha, e_k))
        return ClosedLoopRealization(a_cl=a, c=c, x0=x0)

    def j(alpha):
        r = realization(alpha)
        return h2_norm_sq(r.a_cl, r.c, r.x0)

    eps = 1e-6
    base = realization(alpha0)
    deltas = []
    for k in range(p):
        ak = alpha0.copy()
        ak[k] += eps
        deltas.append(delta_realization(base, realization(ak), eps, index=k))
    grad = h2_gradient(base, deltas)

    fd = np.empty(p)
    h = 1e-5
    for k in range(p):
        up, dn = alpha0.copy(), alpha0.copy()
        up[k] += h
        dn[k] -= h
        fd[k] = (j(up) - j(dn)) / (2.0 * h)
    assert grad == pytest.approx(fd, rel=0.01)


def _fake_eval(alpha, values):
    vsi = VsiReport(values=values, v_min=min(values.values()),
                    critical_bus=min(values, key=values.get),
                    out_of_range=())
    return PlantEval(alpha=np.asarray(alpha, float), op=None, vsi=vsi)


def test_objective_terms_quadratic_incentive():
    ev = _fake_eval([5.0], {2: 0.9})
    j1, j2, j3 = objective_terms(ev, i_demand=[2.0], beta=[2.0], beta_si=[1.0])
    assert j1 is None
    assert j2 == pytest.approx(18.0)  # beta * (5 - 2)^2
    assert j3 == pytest.approx(0.1)


def test_vsi_shortfall_weighted_max():
    report = VsiReport(values={2: 0.9, 3: 0.6}, v_min=0.6, critical_bus=3,
                       out_of_range=())
    assert vsi_shortfall(report, [1.0, 1.0]) == pytest.approx(0.4)
    assert vsi_shortfall(report, [4.0, 0.5]) == pytest.approx(0.4)


def test_weight_validation(grid_p3, demand_p3):
    with pytest.raises(ValueError):
        run_algorithm1(OptimizationConfig(i_demand=demand_p3, gamma=1.5),
                       grid_p3)
    with pytest.raises(ValueError):
        run_algorithm2(OptimizationConfig(i_demand=demand_p3, gamma1=0.7,
                                          gamma2=0.7), grid_p3)


def test_incentive_only_returns_demand(grid_p3, demand_p3):
    config = OptimizationConfig(i_demand=demand_p3, gamma=1.0)
    result = run_algorithm1(config, grid_p3)
    assert result.converged
    assert result.iterations == 1
    assert result.i_e_star == pytest.approx(demand_p3)


def test_algorithm2_degenerates_to_algorithm1(alg1_p3, alg2_p3_zero):
    assert alg2_p3_zero.i_e_star == pytest.approx(alg1_p3.i_e_star)
    assert len(alg2_p3_zero.trace) == len(alg1_p3.trace)
    for r1, r2 in zip(alg1_p3.trace, alg2_p3_zero.trace):
        assert r2["j"] == pytest.approx(r1["j"])
        assert r2["step"] == pytest.approx(r1["step"])


def test_trace_and_result_export(alg1_p3, tmp_path):
    trace_path = tmp_path / "trace.csv"
    write_trace_csv(alg1_p3.trace, trace_path)
    lines = trace_path.read_text().strip().splitlines()
    assert lines[0] == "iteration,j,j_r1,j_r2,j_r3,step,grad_norm"
    assert len(lines) == 1 + len(alg1_p3.trace)

    result_path = tmp_path / "result.json"
    write_result_json(alg1_p3, result_path)
    import json
    payload = json.loads(result_path.read_text())
    assert payload["converged"] is True
    assert np.asarray(payload["k_gain"]).shape == alg1_p3.k_gain.shape


def test_estimator_front_end(grid_p3, demand_p3):
    est = SetpointCoOptimizer(gamma=1.0)
    assert clone(est).get_params()["gamma"] == 1.0
    est.fit(grid_p3)
    assert est.converged_
    assert est.n_iter_ == 1
    assert est.i_e_star_ == pytest.approx(demand_p3)
    assert est.k_gain_.shape == (9, 21)

    est2 = StabilityAwareCoOptimizer(gamma1=0.5, gamma2=0.5)
    params = est2.get_params()
    assert params["gamma1"] == 0.5 and params["gamma2"] == 0.5
