"""Nonlinear dynamics of the EVCS-integrated feeder.

The model is a semi-explicit DAE

    xdot = f(x, y, u, alpha)
    0    = g(x, y)

with per-station converter states (PLL, LCL filter, PI loops, DC bus), two
rotating-frame states per line, and the bus voltages as algebraic variables.

Frames and scaling: the network is expressed in a common rotating frame at
``omega_c``.  Each station's converter quantities live in its own PLL frame
(rotated by the PLL angle) on the low-voltage side of an ideal interface
transformer, so the converter sees its nominal AC voltage regardless of the
feeder voltage level.  Bus voltages are phase-peak volts; powers are total
three-phase watts, P = 1.5 (v_d i_d + v_q i_q).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .network import EvcsParams, GridModel, LineSpec

__all__ = [
    "StateLayout",
    "OperatingPoint",
    "EquilibriumError",
    "SingularStateError",
    "saturate",
    "evcs_rhs",
    "line_rhs",
    "algebraic_residual",
    "dae_rhs",
    "solve_equilibrium",
]

EVCS_STATE_NAMES = (
    "delta", "zeta", "i_gd", "i_gq", "i_cd", "i_cq",
    "v_cd", "v_cq", "psi", "chi_d", "chi_q", "v_dc",
)
N_EVCS_STATES = 12
# indices of the physical states kept by the reduced model, per station block
PHYSICAL_IDX = (2, 3, 4, 5, 6, 7, 11)


class EquilibriumError(RuntimeError):
    """Newton iteration failed or the solution is outside the model's validity."""


class SingularStateError(ValueError):
    """A state reached a value where the model equations degenerate."""


@dataclass(frozen=True)
class StateLayout:
    """Index bookkeeping for the stacked DAE vectors."""

    n_bus: int
    n_evcs: int
    n_line: int

    @property
    def dim_x(self) -> int:
        return N_EVCS_STATES * self.n_evcs + 2 * self.n_line

    @property
    def dim_y(self) -> int:
        return 2 * self.n_bus

    @property
    def dim_u(self) -> int:
        return 3 * self.n_evcs

    def evcs_slice(self, j: int) -> slice:
        return slice(N_EVCS_STATES * j, N_EVCS_STATES * (j + 1))

    def line_slice(self, j: int) -> slice:
        base = N_EVCS_STATES * self.n_evcs
        return slice(base + 2 * j, base + 2 * (j + 1))

    def bus_slice(self, bus_id: int) -> slice:
        return slice(2 * (bus_id - 1), 2 * bus_id)

    def physical_indices(self) -> np.ndarray:
        """Full-state indices of the 7-per-station physical states."""
        out = []
        for j in range(self.n_evcs):
            out.extend(N_EVCS_STATES * j + k for k in PHYSICAL_IDX)
        return np.array(out, dtype=int)

    def nonphysical_indices(self) -> np.ndarray:
        phys = set(self.physical_indices().tolist())
        return np.array([i for i in range(self.dim_x) if i not in phys], dtype=int)

    def state_names(self) -> list[str]:
        names = []
        for j in range(self.n_evcs):
            names.extend(f"evcs{j + 1}_{s}" for s in EVCS_STATE_NAMES)
        for j in range(self.n_line):
            names.extend((f"line{j + 1}_id", f"line{j + 1}_iq"))
        return names


def layout_for(grid: GridModel) -> StateLayout:
    return StateLayout(n_bus=grid.n_bus, n_evcs=grid.n_evcs, n_line=len(grid.lines))


def saturate(v: float) -> float:
    """Clamp to [-1, 1]."""
    return min(1.0, max(-1.0, v))


def evcs_rhs(x_k, v_dq, u_k, alpha_k: float, params: EvcsParams,
             omega_bar: float, omega_c: float) -> np.ndarray:
    """Time derivatives of one station's 12 converter states.

    ``v_dq`` is the bus voltage seen by the converter, already in the
    converter's PLL frame and on the low-voltage side of the interface
    transformer.  ``u_k`` is (dm_d, dm_q, di_e); ``alpha_k`` the charging
    current setpoint in A.
    """
    delta, zeta, igd, igq, icd, icq, vcd, vcq, psi, chid, chiq, vdc = x_k
    vd, vq = v_dq
    dmd, dmq, die = u_k
    if vdc <= 0.0:
        raise SingularStateError("DC-link voltage must stay positive")

    p = params
    omega = p.kappa_p1 * vq + zeta
    l_tot = p.l_g + p.l_c

    icd_ref = p.kappa_p2 * (p.v_dc_star - vdc) + psi
    icq_ref = 0.0
    vff_d = omega * l_tot * icq + vd
    vff_q = vq - omega * l_tot * icd
    # PI terms enter negated: the bridge sees v_c - m v_dc/2, so raising m
    # lowers the current into the bridge
    md = saturate(2.0 / vdc * (vff_d - p.kappa_p3 * (icd_ref - icd) - chid) + dmd)
    mq = saturate(2.0 / vdc * (vff_q - p.kappa_p4 * (icq_ref - icq) - chiq) + dmq)

    return np.array([
        omega_bar * (omega - omega_c),
        p.kappa_i1 * vq,
        (vd - vcd + omega * p.l_g * igq) / p.l_g,
        (vq - vcq - omega * p.l_g * igd) / p.l_g,
        (vcd - md * vdc / 2.0 + omega * p.l_c * icq) / p.l_c,
        (vcq - mq * vdc / 2.0 - omega * p.l_c * icd) / p.l_c,
        (igd - icd + omega * p.c_f * vcq) / p.c_f,
        (igq - icq - omega * p.c_f * vcd) / p.c_f,
        p.kappa_i2 * (p.v_dc_star - vdc),
        p.kappa_i3 * (icd_ref - icd),
        p.kappa_i4 * (icq_ref - icq),
        # lossless averaged bridge: DC-side current is 3/4 (m . i_c)
        3.0 * (md * icd + mq * icq) / (4.0 * p.c_dc) - (alpha_k + die) / p.c_dc,
    ])


def line_rhs(x_line, v_k_dq, v_h_dq, line: LineSpec, omega_c: float) -> np.ndarray:
    """Rotating-frame dynamics of a series r-l line from bus k to bus h."""
    i_d, i_q = x_line
    x_ohm = omega_c * line.l
    dvd = v_k_dq[0] - v_h_dq[0]
    dvq = v_k_dq[1] - v_h_dq[1]
    return np.array([
        (dvd - line.r * i_d + x_ohm * i_q) / line.l,
        (dvq - line.r * i_q - x_ohm * i_d) / line.l,
    ])


class SystemModel:
    """Vectorized f/g evaluation for one grid (precomputed parameter arrays)."""

    def __init__(self, grid: GridModel):
        self.grid = grid
        self.layout = layout_for(grid)
        ev = grid.evcs
        p = len(ev)
        self.p = p
        as_arr = lambda attr: np.array([getattr(e, attr) for e in ev], dtype=float)
        self.lg = as_arr("l_g")
        self.lc = as_arr("l_c")
        self.cf = as_arr("c_f")
        self.cdc = as_arr("c_dc")
        self.vdcs = as_arr("v_dc_star")
        self.kp1 = as_arr("kappa_p1")
        self.ki1 = as_arr("kappa_i1")
        self.kp2 = as_arr("kappa_p2")
        self.ki2 = as_arr("kappa_i2")
        self.kp3 = as_arr("kappa_p3")
        self.ki3 = as_arr("kappa_i3")
        self.kp4 = as_arr("kappa_p4")
        self.ki4 = as_arr("kappa_i4")
        self.ratio = grid.v_pcc / as_arr("v_ac_nom")
        self.ev_bus = np.array([e.bus - 1 for e in ev], dtype=int)

        self.line_from = np.array([ln.from_bus - 1 for ln in grid.lines], dtype=int)
        self.line_to = np.array([ln.to_bus - 1 for ln in grid.lines], dtype=int)
        self.line_r = np.array([ln.r for ln in grid.lines], dtype=float)
        self.line_l = np.array([ln.l for ln in grid.lines], dtype=float)
        self.line_x = grid.omega_c * self.line_l
        self.y_branch = 1.0 / (self.line_r + 1j * self.line_x)

        self.p_load = np.array([b.p_load for b in grid.buses], dtype=float)
        self.q_load = np.array([b.q_load for b in grid.buses], dtype=float)
        self.omega_bar = grid.omega_bar
        self.omega_c = grid.omega_c
        self.v_pcc = grid.v_pcc

    # -- shared pieces -----------------------------------------------------

    def _evcs_frames(self, xe, y):
        """Converter-frame voltages (p,2) for station state block xe (p,12)."""
        vb = y.reshape(-1, 2)[self.ev_bus]
        c, s = np.cos(xe[:, 0]), np.sin(xe[:, 0])
        vd = (c * vb[:, 0] + s * vb[:, 1]) / self.ratio
        vq = (-s * vb[:, 0] + c * vb[:, 1]) / self.ratio
        return vd, vq

    def duty_cycles(self, x, y, u=None):
        """(m_d, m_q) per station, saturation applied."""
        xe = x[: 12 * self.p].reshape(self.p, N_EVCS_STATES)
        vd, vq = self._evcs_frames(xe, y)
        if u is None:
            dmd = dmq = 0.0
        else:
            uu = np.asarray(u, dtype=float).reshape(self.p, 3)
            dmd, dmq = uu[:, 0], uu[:, 1]
        zeta, igd, icd, icq, vcq = xe[:, 1], xe[:, 2], xe[:, 4], xe[:, 5], xe[:, 7]
        psi, chid, chiq, vdc = xe[:, 8], xe[:, 9], xe[:, 10], xe[:, 11]
        omega = self.kp1 * vq + zeta
        l_tot = self.lg + self.lc
        icd_ref = self.kp2 * (self.vdcs - vdc) + psi
        vff_d = omega * l_tot * icq + vd
        vff_q = vq - omega * l_tot * icd
        md = np.clip(2.0 / vdc * (vff_d - self.kp3 * (icd_ref - icd) - chid) + dmd, -1.0, 1.0)
        mq = np.clip(2.0 / vdc * (vff_q - self.kp4 * (0.0 - icq) - chiq) + dmq, -1.0, 1.0)
        return md, mq

    # -- f and g -----------------------------------------------------------

    def f(self, x, y, u, alpha) -> np.ndarray:
        p = self.p
        xe = x[: 12 * p].reshape(p, N_EVCS_STATES)
        xl = x[12 * p:].reshape(-1, 2)
        uu = np.zeros((p, 3)) if u is None else np.asarray(u, dtype=float).reshape(p, 3)
        alpha = np.asarray(alpha, dtype=float)

        vd, vq = self._evcs_frames(xe, y)
        zeta = xe[:, 1]
        igd, igq = xe[:, 2], xe[:, 3]
        icd, icq = xe[:, 4], xe[:, 5]
        vcd, vcq = xe[:, 6], xe[:, 7]
        psi, chid, chiq, vdc = xe[:, 8], xe[:, 9], xe[:, 10], xe[:, 11]
        if np.any(vdc <= 0.0):
            raise SingularStateError("DC-link voltage must stay positive")

        omega = self.kp1 * vq + zeta
        l_tot = self.lg + self.lc
        icd_ref = self.kp2 * (self.vdcs - vdc) + psi
        vff_d = omega * l_tot * icq + vd
        vff_q = vq - omega * l_tot * icd
        md = np.clip(2.0 / vdc * (vff_d - self.kp3 * (icd_ref - icd) - chid) + uu[:, 0], -1.0, 1.0)
        mq = np.clip(2.0 / vdc * (vff_q - self.kp4 * (0.0 - icq) - chiq) + uu[:, 1], -1.0, 1.0)

        de = np.empty_like(xe)
        de[:, 0] = self.omega_bar * (omega - self.omega_c)
        de[:, 1] = self.ki1 * vq
        de[:, 2] = (vd - vcd + omega * self.lg * igq) / self.lg
        de[:, 3] = (vq - vcq - omega * self.lg * igd) / self.lg
        de[:, 4] = (vcd - md * vdc / 2.0 + omega * self.lc * icq) / self.lc
        de[:, 5] = (vcq - mq * vdc / 2.0 - omega * self.lc * icd) / self.lc
        de[:, 6] = (igd - icd + omega * self.cf * vcq) / self.cf
        de[:, 7] = (igq - icq - omega * self.cf * vcd) / self.cf
        de[:, 8] = self.ki2 * (self.vdcs - vdc)
        de[:, 9] = self.ki3 * (icd_ref - icd)
        de[:, 10] = self.ki4 * (0.0 - icq)
        de[:, 11] = 3.0 * (md * icd + mq * icq) / (4.0 * self.cdc) \
            - (alpha + uu[:, 2]) / self.cdc

        v = y.reshape(-1, 2)
        dvd = v[self.line_from, 0] - v[self.line_to, 0]
        dvq = v[self.line_from, 1] - v[self.line_to, 1]
        dl = np.empty_like(xl)
        dl[:, 0] = (dvd - self.line_r * xl[:, 0] + self.line_x * xl[:, 1]) / self.line_l
        dl[:, 1] = (dvq - self.line_r * xl[:, 1] - self.line_x * xl[:, 0]) / self.line_l
        return np.concatenate([de.ravel(), dl.ravel()])

    def evcs_power(self, x, y):
        """Three-phase (P, Q) drawn by each station at its bus, W / VAr."""
        xe = x[: 12 * self.p].reshape(self.p, N_EVCS_STATES)
        vd, vq = self._evcs_frames(xe, y)
        igd, igq = xe[:, 2], xe[:, 3]
        pe = 1.5 * (vd * igd + vq * igq)
        qe = 1.5 * (vq * igd - vd * igq)
        return pe, qe

    def g(self, x, y) -> np.ndarray:
        """Power balance written in bus voltages and branch admittances.

        Line-current states do not appear here: the network constraint is
        the quasi-stationary power flow, and the line states are consistent
        with it at equilibrium through their own dynamics.
        """
        n = self.layout.n_bus
        v = y.reshape(n, 2)
        vc = v[:, 0] + 1j * v[:, 1]

        branch = self.y_branch * (vc[self.line_from] - vc[self.line_to])
        i_out = np.zeros(n, dtype=complex)
        np.add.at(i_out, self.line_from, branch)
        np.add.at(i_out, self.line_to, -branch)
        s_out = 1.5 * vc * np.conj(i_out)  # flows from bus into the network

        p_cons = self.p_load.copy()
        q_cons = self.q_load.copy()
        if self.p:
            pe, qe = self.evcs_power(x, y)
            np.add.at(p_cons, self.ev_bus, pe)
            np.add.at(q_cons, self.ev_bus, qe)

        res = np.empty((n, 2))
        res[:, 0] = s_out.real + p_cons
        res[:, 1] = s_out.imag + q_cons
        # PCC is a stiff voltage source: pin its voltage instead of balancing
        res[0, 0] = v[0, 0] - self.v_pcc
        res[0, 1] = v[0, 1]
        return res.ravel()

    def pcc_power(self, x, y):
        """(P, Q) supplied by the upstream grid at bus 1."""
        v = y.reshape(-1, 2)
        xl = x[12 * self.p:].reshape(-1, 2)
        i_out = np.zeros(2)
        for arr, sgn in ((self.line_from, 1.0), (self.line_to, -1.0)):
            sel = arr == 0
            if np.any(sel):
                i_out += sgn * xl[sel].sum(axis=0)
        pg = 1.5 * (v[0, 0] * i_out[0] + v[0, 1] * i_out[1])
        qg = 1.5 * (v[0, 1] * i_out[0] - v[0, 0] * i_out[1])
        return pg, qg

    # -- equilibrium -------------------------------------------------------

    def flat_start(self, alpha) -> tuple[np.ndarray, np.ndarray]:
        """Closed-form initial guess: nominal voltage everywhere, no flow."""
        lay = self.layout
        alpha = np.asarray(alpha, dtype=float)
        x = np.zeros(lay.dim_x)
        y = np.tile([self.v_pcc, 0.0], lay.n_bus)
        if self.p:
            omega = self.omega_c
            vloc = self.v_pcc / self.ratio
            vcd = vloc / (1.0 - omega**2 * self.lg * self.cf)
            igq = omega * self.cf * vcd
            icd = (2.0 / 3.0) * alpha * self.vdcs / vcd
            igd = icd / (1.0 - omega**2 * self.cf * self.lg)
            vcq = -omega * self.lg * igd
            md = 2.0 * vcd / self.vdcs
            mq = 2.0 * (vcq - omega * self.lc * icd) / self.vdcs
            xe = np.zeros((self.p, N_EVCS_STATES))
            xe[:, 1] = omega
            xe[:, 2] = igd
            xe[:, 3] = igq
            xe[:, 4] = icd
            xe[:, 6] = vcd
            xe[:, 7] = vcq
            xe[:, 8] = icd
            xe[:, 9] = vloc - md * self.vdcs / 2.0
            xe[:, 10] = -(vcq + omega * self.lg * icd)
            xe[:, 11] = self.vdcs
            x[: 12 * self.p] = xe.ravel()
        return x, y


def algebraic_residual(x, y, grid: GridModel) -> np.ndarray:
    """Network power-balance residual (2 per bus, W / VAr; PCC rows pin V)."""
    return SystemModel(grid).g(np.asarray(x, float), np.asarray(y, float))


def dae_rhs(x, y, u, alpha, grid: GridModel) -> np.ndarray:
    """Stacked state derivatives f(x, y, u, alpha)."""
    return SystemModel(grid).f(np.asarray(x, float), np.asarray(y, float), u, alpha)


@dataclass
class OperatingPoint:
    x_star: np.ndarray
    y_star: np.ndarray
    alpha: np.ndarray
    p_e: np.ndarray  # W per station
    q_e: np.ndarray
    p_g: float  # W at PCC
    q_g: float
    f_residual: float
    g_residual: float

    def bus_voltage_magnitudes(self) -> np.ndarray:
        v = self.y_star.reshape(-1, 2)
        return np.hypot(v[:, 0], v[:, 1])

    def to_dict(self) -> dict:
        return {
            "x_star": self.x_star.tolist(),
            "y_star": self.y_star.tolist(),
            "alpha": self.alpha.tolist(),
            "p_e": self.p_e.tolist(),
            "q_e": self.q_e.tolist(),
            "p_g": self.p_g,
            "q_g": self.q_g,
            "f_residual": self.f_residual,
            "g_residual": self.g_residual,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OperatingPoint":
        return cls(
            x_star=np.asarray(d["x_star"], float),
            y_star=np.asarray(d["y_star"], float),
            alpha=np.asarray(d["alpha"], float),
            p_e=np.asarray(d["p_e"], float),
            q_e=np.asarray(d["q_e"], float),
            p_g=float(d["p_g"]),
            q_g=float(d["q_g"]),
            f_residual=float(d["f_residual"]),
            g_residual=float(d["g_residual"]),
        )


TOL_F_REL = 1e-8
TOL_G = 1e-6  # W
MAX_NEWTON_ITERS = 100
FD_STEP = 1e-7


def _fd_jacobian(fun, z):
    """Central finite-difference Jacobian with step max(1e-7, 1e-7 |z_i|)."""
    f0 = fun(z)
    jac = np.empty((f0.size, z.size))
    for i in range(z.size):
        h = max(FD_STEP, FD_STEP * abs(z[i]))
        zp = z.copy(); zp[i] += h
        zm = z.copy(); zm[i] -= h
        jac[:, i] = (fun(zp) - fun(zm)) / (2.0 * h)
    return jac


def solve_equilibrium(grid: GridModel, alpha, init: OperatingPoint | None = None,
                      model: SystemModel | None = None) -> OperatingPoint:
    """Newton solve of [f; g] = 0 at input u = 0 and setpoint ``alpha``.

    Damped steps (halving on step-norm increase), finite-difference Jacobian,
    flat-start initialization unless ``init`` is given.
    """
    sysm = model if model is not None else SystemModel(grid)
    lay = sysm.layout
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (lay.n_evcs,):
        raise ValueError(f"alpha must have length {lay.n_evcs}")

    nx = lay.dim_x

    def residual(z):
        x, y = z[:nx], z[nx:]
        return np.concatenate([sysm.f(x, y, None, alpha), sysm.g(x, y)])

    if init is not None:
        z = np.concatenate([init.x_star, init.y_star])
    else:
        x0, y0 = sysm.flat_start(alpha)
        z = np.concatenate([x0, y0])

    def converged(res, z):
        scale = max(1.0, np.abs(z[:nx]).max())
        fr = np.abs(res[:nx]).max() if nx else 0.0
        gr = np.abs(res[nx:]).max()
        return fr <= TOL_F_REL * scale * sysm.omega_c and gr <= TOL_G, fr, gr

    res = residual(z)
    for _ in range(MAX_NEWTON_ITERS):
        ok, _, _ = converged(res, z)
        if ok:
            break
        jac = _fd_jacobian(residual, z)
        try:
            step = np.linalg.solve(jac, -res)
        except np.linalg.LinAlgError as exc:
            raise EquilibriumError(f"singular Jacobian in Newton iteration: {exc}")
        step_norm = np.linalg.norm(step)
        lam = 1.0
        for _ in range(20):
            z_new = z + lam * step
            try:
                res_new = residual(z_new)
                new_step = np.linalg.solve(jac, -res_new)
            except (SingularStateError, np.linalg.LinAlgError):
                lam *= 0.5
                continue
            if np.linalg.norm(new_step) < step_norm or lam < 1e-5:
                break
            lam *= 0.5
        else:
            raise EquilibriumError("Newton damping failed to reduce the residual")
        z, res = z_new, res_new
    ok, fr, gr = converged(res, z)
    if not ok:
        raise EquilibriumError(
            f"no equilibrium after {MAX_NEWTON_ITERS} Newton iterations "
            f"(|f|={fr:.3e}, |g|={gr:.3e}); loading may be infeasible"
        )

    x, y = z[:nx], z[nx:]
    if sysm.p:
        md, mq = sysm.duty_cycles(x, y)
        if np.any(np.abs(md) >= 1.0 - 1e-9) or np.any(np.abs(mq) >= 1.0 - 1e-9):
            raise EquilibriumError(
                "duty cycle saturated at the equilibrium; operating point is "
                "outside the converter's linear range"
            )
        pe, qe = sysm.evcs_power(x, y)
    else:
        pe = qe = np.zeros(0)
    pg, qg = sysm.pcc_power(x, y)
    return OperatingPoint(
        x_star=x, y_star=y, alpha=alpha, p_e=pe, q_e=qe,
        p_g=float(pg), q_g=float(qg), f_residual=float(fr), g_residual=float(gr),
    )
