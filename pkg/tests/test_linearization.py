"""Small-signal models, slow/fast reduction, and modal reporting."""

import math

import numpy as np
import pytest

from gridcharge.dynamics import OperatingPoint, StateLayout
from gridcharge.linearization import (FullLinearModel, eigen_report,
                                      linearize, participation_factors,
                                      reduce_model, write_modal_csv)


class _LinearStub:
    """Linear f/g pair with a known Schur-complement elimination."""

    def __init__(self, fx, fy, gx, gy):
        self.fx, self.fy, self.gx, self.gy = fx, fy, gx, gy
        self.layout = StateLayout(n_bus=2, n_evcs=0, n_line=fx.shape[0] // 2)

    def f(self, x, y, u, alpha):
        return self.fx @ x + self.fy @ y

    def g(self, x, y):
        return self.gx @ x + self.gy @ y


def test_linearize_eliminates_algebraic_block_exactly():
    rng = np.random.default_rng(0)
    fx = rng.normal(size=(4, 4))
    fy = rng.normal(size=(4, 4))
    gx = rng.normal(size=(4, 4))
    gy = rng.normal(size=(4, 4)) + 4.0 * np.eye(4)
    stub = _LinearStub(fx, fy, gx, gy)
    op = OperatingPoint(x_star=rng.normal(size=4), y_star=rng.normal(size=4),
                        alpha=np.array([]), p_e=np.array([]), q_e=np.array([]),
                        p_g=0.0, q_g=0.0, f_residual=0.0, g_residual=0.0)
    full = linearize(None, op, model=stub)
    expected = fx - fy @ np.linalg.solve(gy, gx)
    assert np.allclose(full.a, expected, atol=1e-8)


def test_full_model_shapes_and_stability(grid_p3, full_p3):
    lay = full_p3.layout
    assert full_p3.a.shape == (lay.dim_x, lay.dim_x)
    assert full_p3.b.shape == (lay.dim_x, 3 * grid_p3.n_evcs)
    assert np.all(np.linalg.eigvals(full_p3.a).real < 0.0)


def test_input_columns_hit_only_dc_bus(grid_p3, full_p3):
    # the charging-current input enters one station's DC-bus equation alone
    for j, e in enumerate(grid_p3.evcs):
        col = full_p3.b[:, 3 * j + 2]
        row = 12 * j + 11
        assert col[row] == pytest.approx(-1.0 / e.c_dc, rel=1e-6)
        rest = np.delete(col, row)
        assert np.max(np.abs(rest)) < 1e-6 / e.c_dc


def test_reduced_dimensions(grid_p3, red_p3):
    p = grid_p3.n_evcs
    assert red_p3.a.shape == (7 * p, 7 * p)
    assert red_p3.b.shape == (7 * p, 3 * p)
    assert red_p3.n_states == 21
    assert all("psi" not in n and "delta" not in n and "line" not in n
               for n in red_p3.state_names)


def test_modal_reduction_keeps_exact_eigenvalues(full_p3, red_p3):
    lam_full = np.linalg.eigvals(full_p3.a)
    for lam in np.linalg.eigvals(red_p3.a):
        dist = np.min(np.abs(lam_full - lam))
        assert dist <= 1e-6 * max(1.0, abs(lam))


def test_schur_reduction_available_and_stable(full_p3):
    red = reduce_model(full_p3, method="schur")
    assert red.a.shape == (21, 21)
    assert np.all(np.linalg.eigvals(red.a).real < 0.0)


def test_unknown_method_rejected(full_p3):
    with pytest.raises(ValueError, match="unknown reduction"):
        reduce_model(full_p3, method="exact")


def test_auto_falls_back_when_modes_hybridize(full_p10):
    # discharge-capable stations mix the DC bus with controller integrators;
    # the pure modal projection has no physically dominant subspace there
    with pytest.raises(ValueError, match="physically dominant"):
        reduce_model(full_p10, method="modal")
    red = reduce_model(full_p10, method="auto")
    assert red.a.shape == (70, 70)
    assert np.all(np.linalg.eigvals(red.a).real < 0.0)


def test_modal_is_the_auto_choice_on_p3(full_p3, red_p3):
    modal = reduce_model(full_p3, method="modal")
    assert np.allclose(modal.a, red_p3.a)
    assert np.allclose(modal.b, red_p3.b)


def test_participation_diagonal_identity():
    p = participation_factors(np.diag([-1.0, -2.0, -5.0]))
    assert np.allclose(np.sort(p, axis=1)[:, ::-1][:, 0], 1.0)
    assert np.count_nonzero(p > 1e-12) == 3


def test_participation_rows_normalized(full_p3):
    p = participation_factors(full_p3.a)
    assert np.allclose(p.max(axis=1), 1.0)
    assert np.all(p >= 0.0)


def test_eigen_report_trivial_cases():
    rep = eigen_report(-np.eye(3), ["a", "b", "c"])
    assert np.allclose(rep.eigenvalues, -1.0)
    assert np.allclose(rep.damping_ratios, 1.0)

    rep = eigen_report(np.array([[0.0, 1.0], [-1.0, 0.0]]), ["x", "y"])
    assert np.allclose(np.abs(rep.eigenvalues.imag), 1.0)
    assert np.allclose(rep.damping_ratios, 0.0, atol=1e-12)
    assert np.allclose(rep.frequencies_hz, 1.0 / (2.0 * math.pi))


def test_eigen_report_ordering_and_csv(full_p3, tmp_path):
    rep = eigen_report(full_p3.a, full_p3.state_names)
    assert np.all(np.diff(rep.eigenvalues.real) <= 1e-12)
    path = tmp_path / "modes.csv"
    write_modal_csv(rep, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0].startswith("real_1_s,")
    assert len(lines) == 1 + rep.eigenvalues.size
