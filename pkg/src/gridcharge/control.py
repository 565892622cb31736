"""LQR synthesis and H2 norms for the reduced plant.

The performance output stacks the weighted state and input of the closed
loop, C = [Q^{1/2}; R^{1/2} K], so the squared H2 norm of the impulse
response from the initial deviation x0 equals the LQR cost x0' X x0.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_continuous_are, solve_continuous_lyapunov

from .linearization import ReducedLinearModel

__all__ = [
    "psd_sqrt",
    "solve_lyapunov",
    "lqr_gain",
    "kleinman_iteration",
    "closed_loop",
    "performance_output",
    "h2_norm_sq",
]


def psd_sqrt(m: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Symmetric square root; rejects matrices with eigenvalues < -tol."""
    m = np.asarray(m, float)
    m = 0.5 * (m + m.T)
    w, v = np.linalg.eigh(m)
    if w.min() < -tol:
        raise ValueError(f"matrix is not positive semidefinite (min eig {w.min():.3e})")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def solve_lyapunov(a: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Observability-type Lyapunov solution L of A' L + L A + W = 0."""
    a = np.asarray(a, float)
    w = np.asarray(w, float)
    if np.any(np.linalg.eigvals(a).real >= 0.0):
        raise ValueError("A must be Hurwitz for the Lyapunov equation")
    l = solve_continuous_lyapunov(a.T, -w)
    return 0.5 * (l + l.T)


def lyapunov_residual(a, w, l) -> float:
    return float(np.linalg.norm(a.T @ l + l @ a + w, ord="fro"))


def lqr_gain(a, b, q, r):
    """(K, X): state feedback u = -K x minimizing the quadratic cost."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    q = np.asarray(q, float)
    r = np.asarray(r, float)
    x = solve_continuous_are(a, b, q, r)
    k = np.linalg.solve(r, b.T @ x)
    return k, 0.5 * (x + x.T)


def kleinman_iteration(a, b, q, r, k0=None, tol=1e-10, max_iter=100):
    """Policy-iteration solution of the same Riccati equation.

    Used as an independent check on the direct solver.  ``k0`` must be
    stabilizing; defaults to the direct LQR gain perturbation-free start.
    """
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    q = np.asarray(q, float)
    r = np.asarray(r, float)
    if k0 is None:
        k0, _ = lqr_gain(a, b, q, r)
    k = np.asarray(k0, float)
    x_prev = None
    for _ in range(max_iter):
        acl = a - b @ k
        x = solve_lyapunov(acl, q + k.T @ r @ k)
        k = np.linalg.solve(r, b.T @ x)
        if x_prev is not None and np.linalg.norm(x - x_prev, ord="fro") <= \
                tol * max(1.0, np.linalg.norm(x, ord="fro")):
            return k, x
        x_prev = x
    raise RuntimeError("Kleinman iteration did not converge")


def closed_loop(red: ReducedLinearModel, k: np.ndarray) -> np.ndarray:
    return red.a - red.b @ k


def performance_output(red: ReducedLinearModel, k: np.ndarray) -> np.ndarray:
    """C = [Q^{1/2}; R^{1/2} K] stacked on the reduced state."""
    return np.vstack([psd_sqrt(red.q), psd_sqrt(red.r) @ k])


def h2_norm_sq(a_cl: np.ndarray, c: np.ndarray, x0: np.ndarray) -> float:
    """Squared H2 norm of C e^{A t} x0, via the observability Gramian."""
    l = solve_lyapunov(a_cl, c.T @ c)
    return float(x0 @ l @ x0)
