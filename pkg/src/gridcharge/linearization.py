"""Small-signal models about an operating point, and slow/fast reduction.

The algebraic constraint is eliminated at linearization time:

    A = f_x - f_y g_y^{-1} g_x,     B = f_u

so the linear model lives on the state vector alone.  The reduced model keeps
the seven "physical" converter states per station (filter currents, filter
capacitor voltage, DC-link voltage) and removes the rest: controller
integrators whose dynamics do not feed back through the fast block are
truncated, the remaining fast states (PLL angle, line currents) are
residualized through a Schur complement.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import StateLayout, OperatingPoint, SystemModel, layout_for
from .network import GridModel

__all__ = [
    "FullLinearModel",
    "ReducedLinearModel",
    "ModalReport",
    "linearize",
    "reduce_model",
    "participation_factors",
    "eigen_report",
    "write_modal_csv",
]

FD_REL = 1e-6
# relative row-norm threshold below which a fast state is considered
# decoupled from the fast block and is truncated instead of residualized
TRUNCATE_TOL = 1e-6
# a mode may enter the modal projection only if the kept (physical) states
# carry at least this participation share; below it the slow invariant
# subspace is not physically dominant and the Schur route is used instead
MODAL_SHARE_MIN = 0.5


@dataclass
class FullLinearModel:
    """x' = a x + b u on the full differential state."""

    a: np.ndarray
    b: np.ndarray
    layout: StateLayout
    state_names: list[str]


@dataclass
class ReducedLinearModel:
    """Physical-state subsystem with fast/controller dynamics removed.

    Carries the LQR design data (q, r, x_hat_0) alongside the (a, b) pair so
    downstream consumers see one self-contained plant description.
    """

    a: np.ndarray
    b: np.ndarray
    slow_indices: np.ndarray  # into the full state vector
    state_names: list[str]
    q: np.ndarray = None
    r: np.ndarray = None
    x_hat_0: np.ndarray = None

    @property
    def n_states(self) -> int:
        return self.a.shape[0]


def default_weights(n_slow: int, n_inputs: int):
    """Q = I, R = 0.1 I: state tracking dominates input effort."""
    return np.eye(n_slow), 0.1 * np.eye(n_inputs)


def default_disturbance(n_stations: int) -> np.ndarray:
    """Unit initial deviation on every DC-link voltage coordinate."""
    x0 = np.zeros(7 * n_stations)
    x0[6::7] = 1.0
    return x0


@dataclass
class ModalReport:
    eigenvalues: np.ndarray
    damping_ratios: np.ndarray
    frequencies_hz: np.ndarray
    participation: np.ndarray  # (n_modes, n_states)
    state_names: list[str]

    def dominant_state(self, k: int) -> str:
        return self.state_names[int(np.argmax(self.participation[k]))]


def _fd_columns(fun, v0, out_dim):
    """Central differences of ``fun`` w.r.t. each entry of ``v0``."""
    jac = np.empty((out_dim, v0.size))
    for i in range(v0.size):
        h = FD_REL * max(1.0, abs(v0[i]))
        vp = v0.copy(); vp[i] += h
        vm = v0.copy(); vm[i] -= h
        jac[:, i] = (fun(vp) - fun(vm)) / (2.0 * h)
    return jac


def linearize(grid: GridModel, op: OperatingPoint,
              model: SystemModel | None = None) -> FullLinearModel:
    """Finite-difference linearization with the network equations eliminated."""
    sysm = model if model is not None else SystemModel(grid)
    lay = sysm.layout
    x0, y0, alpha = op.x_star, op.y_star, op.alpha
    u0 = np.zeros(lay.dim_u)

    f_x = _fd_columns(lambda x: sysm.f(x, y0, u0, alpha), x0.copy(), lay.dim_x)
    f_y = _fd_columns(lambda y: sysm.f(x0, y, u0, alpha), y0.copy(), lay.dim_x)
    f_u = _fd_columns(lambda u: sysm.f(x0, y0, u, alpha), u0, lay.dim_x)
    g_x = _fd_columns(lambda x: sysm.g(x, y0), x0.copy(), lay.dim_y)
    g_y = _fd_columns(lambda y: sysm.g(x0, y), y0.copy(), lay.dim_y)

    a = f_x - f_y @ np.linalg.solve(g_y, g_x)
    return FullLinearModel(a=a, b=f_u, layout=lay, state_names=lay.state_names())


def _reduce_schur(a, b, slow, fast):
    """First-order quasi-steady-state elimination of the fast block.

    Fast states whose rows in the fast-fast block are (numerically)
    structurally zero cannot be residualized -- their quasi-steady-state
    equation has no solution -- so they are truncated (set to zero in the
    slow model).  This repeats until the remaining fast block is regular,
    which is then removed by a Schur complement.
    """
    keep = list(range(fast.size))
    while True:
        idx = fast[keep]
        a_ff = a[np.ix_(idx, idx)]
        row_ff = np.abs(a_ff).max(axis=1) if keep else np.array([])
        row_all = np.abs(a[idx, :]).max(axis=1)
        dead = [k for k, (rf, ra) in enumerate(zip(row_ff, row_all))
                if rf <= TRUNCATE_TOL * max(ra, 1.0)]
        if not dead:
            break
        for k in reversed(dead):
            keep.pop(k)
        if not keep:
            break

    res_idx = fast[keep]
    a_ss = a[np.ix_(slow, slow)]
    b_s = b[slow, :]
    if res_idx.size == 0:
        return a_ss, b_s
    a_sf = a[np.ix_(slow, res_idx)]
    a_fs = a[np.ix_(res_idx, slow)]
    a_ff = a[np.ix_(res_idx, res_idx)]
    a_red = a_ss - a_sf @ np.linalg.solve(a_ff, a_fs)
    b_red = b_s - a_sf @ np.linalg.solve(a_ff, b[res_idx, :])
    return a_red, b_red


def _reduce_modal(a, b, slow):
    """Exact slow-manifold reduction expressed in the physical coordinates.

    Selects the invariant subspace spanned by the modes with the highest
    total participation from the kept (physical) states and projects the
    dynamics onto it.  The retained eigenvalues are reproduced exactly,
    which the first-order Schur complement cannot do when the discarded
    block contains slow controller integrators.
    """
    n_keep = slow.size
    eigvals, right = np.linalg.eig(a)
    left = np.linalg.inv(right)  # rows, bi-orthonormal to `right` columns
    part = np.abs(right * left.T)  # (state, mode)
    tot = part.sum(axis=0)
    tot[tot == 0.0] = 1.0
    share = part[slow, :].sum(axis=0) / tot

    # conjugate-closed clusters, greedily by physical participation share
    used = np.zeros(eigvals.size, dtype=bool)
    clusters = []
    for k in range(eigvals.size):
        if used[k]:
            continue
        used[k] = True
        members = [k]
        if abs(eigvals[k].imag) > 0.0:
            rest = np.flatnonzero(~used)
            if rest.size:
                j = rest[np.argmin(np.abs(eigvals[rest] - eigvals[k].conj()))]
                if abs(eigvals[j] - eigvals[k].conj()) <= 1e-6 * max(1.0, abs(eigvals[k])):
                    used[j] = True
                    members.append(j)
        clusters.append((share[members].mean(), members))
    clusters.sort(key=lambda c: -c[0])

    chosen: list[int] = []
    min_share = 1.0
    for cluster_share, members in clusters:
        if len(chosen) == n_keep:
            break
        if len(chosen) + len(members) <= n_keep:
            chosen.extend(members)
            min_share = min(min_share, cluster_share)
    if len(chosen) != n_keep:
        raise ValueError("could not select a conjugate-closed slow subspace")
    if min_share < MODAL_SHARE_MIN:
        raise ValueError(
            f"no physically dominant invariant subspace: weakest retained "
            f"mode has physical participation share {min_share:.3f}"
        )

    v_s = right[:, chosen]
    w_s = left[chosen, :]
    pv = v_s[slow, :]
    a_red = np.real(pv @ np.diag(eigvals[chosen]) @ np.linalg.inv(pv))
    b_red = np.real(pv @ (w_s @ b))
    return a_red, b_red


def reduce_model(full: FullLinearModel, q: np.ndarray | None = None,
                 r: np.ndarray | None = None,
                 x_hat_0: np.ndarray | None = None,
                 method: str = "auto") -> ReducedLinearModel:
    """Reduce to the 7-per-station physical states.

    ``method="modal"`` projects onto the exact slow invariant subspace, which
    reproduces the retained eigenvalues exactly but exists only when every
    retained mode is physically dominant; ``method="schur"`` is the
    first-order quasi-steady-state elimination, which always applies.
    ``method="auto"`` (default) prefers modal and falls back to Schur --
    discharge-capable stations hybridize the DC-bus and voltage-loop states
    into mixed modes with no physically dominant subspace.  All routes keep
    the same physical state coordinates.
    """
    lay = full.layout
    slow = lay.physical_indices()
    fast = lay.nonphysical_indices()
    if method == "modal":
        a_red, b_red = _reduce_modal(full.a, full.b, slow)
    elif method == "schur":
        a_red, b_red = _reduce_schur(full.a, full.b, slow, fast)
    elif method == "auto":
        try:
            a_red, b_red = _reduce_modal(full.a, full.b, slow)
        except ValueError:
            a_red, b_red = _reduce_schur(full.a, full.b, slow, fast)
    else:
        raise ValueError(f"unknown reduction method: {method!r}")

    n_slow, n_in = a_red.shape[0], b_red.shape[1]
    q_def, r_def = default_weights(n_slow, n_in)
    if q is None:
        q = q_def
    if r is None:
        r = r_def
    if x_hat_0 is None:
        x_hat_0 = default_disturbance(lay.n_evcs)

    names = [full.state_names[i] for i in slow]
    return ReducedLinearModel(
        a=a_red, b=b_red, slow_indices=slow, state_names=names,
        q=np.asarray(q, float), r=np.asarray(r, float),
        x_hat_0=np.asarray(x_hat_0, float),
    )


def participation_factors(a: np.ndarray) -> np.ndarray:
    """|left_i . right_i| per (mode, state), rows normalized to max 1."""
    eigvals, right = np.linalg.eig(a)
    left = np.linalg.inv(right).T  # columns are left eigenvectors
    p = np.abs(left.T * right.T)  # (mode, state)
    peak = p.max(axis=1, keepdims=True)
    peak[peak == 0.0] = 1.0
    return p / peak


def eigen_report(a: np.ndarray, state_names: list[str]) -> ModalReport:
    eigvals = np.linalg.eigvals(a)
    order = np.argsort(eigvals.real)[::-1]  # least damped first
    eigvals = eigvals[order]
    mags = np.abs(eigvals)
    damping = np.where(mags > 0.0, -eigvals.real / np.where(mags > 0, mags, 1.0), 1.0)
    freqs = np.abs(eigvals.imag) / (2.0 * math.pi)
    p = participation_factors(a)[order]
    return ModalReport(eigenvalues=eigvals, damping_ratios=damping,
                       frequencies_hz=freqs, participation=p,
                       state_names=list(state_names))


def write_modal_csv(report: ModalReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["real_1_s", "imag_rad_s", "damping_ratio",
                    "frequency_hz", "dominant_state"])
        for k, lam in enumerate(report.eigenvalues):
            w.writerow([f"{lam.real:.6e}", f"{lam.imag:.6e}",
                        f"{report.damping_ratios[k]:.4f}",
                        f"{report.frequencies_hz[k]:.4f}",
                        report.dominant_state(k)])
