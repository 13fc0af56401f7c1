"""Box-constrained QP solve by Nesterov's fast gradient method, plus the
Riccati machinery shared by the terminal cost and the steady-state filter.

The solver minimizes 0.5 z'Hz + g'z over lb <= z <= ub with the accelerated
projected-gradient iteration for strongly convex objectives:

    z+ = clip(y - (1/L)(Hy + g));   y+ = z+ + beta (z+ - z),
    beta = (sqrt(L) - sqrt(mu)) / (sqrt(L) + sqrt(mu)).

Every iterate is projected, so the returned point is feasible whether or not
the iteration budget sufficed. Convergence is declared on the projected-
gradient step norm r(z) = || z - clip(z - (Hz+g)/L) ||_inf, the displacement
one more projected-gradient step would make; it is zero exactly at the
optimum and is measured in the decision variable's own units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class QpProblem:
    H: np.ndarray
    g: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    L: float      # >= lambda_max(H)
    mu: float     # <= lambda_min(H), > 0

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        self.g = np.asarray(self.g, dtype=float)
        self.lb = np.asarray(self.lb, dtype=float)
        self.ub = np.asarray(self.ub, dtype=float)
        n = self.g.shape[0]
        if self.H.shape != (n, n):
            raise ValueError(f"H shape {self.H.shape} inconsistent with g ({n})")
        asym = float(np.max(np.abs(self.H - self.H.T), initial=0.0))
        if asym > 1e-12 * max(1.0, float(np.max(np.abs(self.H)))):
            raise ValueError(f"H not symmetric (max asymmetry {asym:g})")
        if not np.isfinite(self.H).all() or not np.isfinite(self.g).all():
            raise ValueError("non-finite entries in H or g")
        if self.mu <= 0:
            raise ValueError(f"strong convexity constant must be positive, got {self.mu}")
        if np.any(self.lb > self.ub):
            raise ValueError("lb > ub")

    def objective(self, z: np.ndarray) -> float:
        return float(0.5 * z @ self.H @ z + self.g @ z)


@dataclass
class QpSolution:
    z: np.ndarray
    iterations: int
    converged: bool
    residual: float


def solve(problem: QpProblem, warm: np.ndarray | None = None,
          max_iter: int = 2000, tol: float = 1e-6) -> QpSolution:
    """Iteration-capped fast-gradient solve; hitting the cap returns the last
    (feasible) iterate with converged=False rather than raising."""
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    H, g, lb, ub = problem.H, problem.g, problem.lb, problem.ub
    L, mu = problem.L, problem.mu
    inv_l = 1.0 / L
    beta = (math.sqrt(L) - math.sqrt(mu)) / (math.sqrt(L) + math.sqrt(mu))

    z = np.clip(warm if warm is not None else np.zeros_like(g), lb, ub)
    y = z.copy()
    z_new = z
    residual = math.inf
    iters = 0
    for iters in range(1, max_iter + 1):
        z_new = np.clip(y - inv_l * (H @ y + g), lb, ub)
        grad = H @ z_new + g
        residual = float(np.max(np.abs(z_new - np.clip(z_new - inv_l * grad, lb, ub)), initial=0.0))
        if residual <= tol:
            return QpSolution(z=z_new, iterations=iters, converged=True, residual=residual)
        y = z_new + beta * (z_new - z)
        z = z_new
    return QpSolution(z=z_new, iterations=iters, converged=False, residual=residual)


def _power_iteration(M: np.ndarray, max_iter: int = 200_000, rtol: float = 1e-13) -> float:
    """Dominant eigenvalue of symmetric PSD M via power iteration with a
    fixed, fully dense start vector (deterministic, never orthogonal to the
    dominant eigenspace in practice)."""
    n = M.shape[0]
    v = 1.0 + 1e-3 * np.arange(1, n + 1, dtype=float)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = M @ v
        norm_w = float(np.linalg.norm(w))
        if norm_w == 0.0:
            return 0.0  # M is the zero matrix (or v in its null space: PSD => eigval 0)
        lam_new = float(v @ w)
        v = w / norm_w
        if abs(lam_new - lam) <= rtol * max(1.0, abs(lam_new)):
            return lam_new
        lam = lam_new
    raise RuntimeError(f"power iteration did not converge in {max_iter} iterations")


def lipschitz_upper(H: np.ndarray, safety: float = 1e-8) -> float:
    """Top eigenvalue of symmetric PSD H via power iteration, nudged up so it
    is safe as a gradient Lipschitz constant."""
    return _power_iteration(H, max_iter=20_000, rtol=1e-11) * (1.0 + safety)


def extremal_eigs(H: np.ndarray) -> tuple[float, float]:
    """(L, mu) estimates of the extreme eigenvalues of symmetric H.

    L comes from power iteration on H, mu from power iteration on the
    spectral complement L*I - H. Estimates are nudged outward by 1e-8
    relative so L is safe as a Lipschitz constant and mu as a strong
    convexity constant; both remain within 1e-6 of the true values.
    """
    H = np.asarray(H, dtype=float)
    if np.max(np.abs(H - H.T), initial=0.0) > 1e-9 * max(1.0, float(np.max(np.abs(H)))):
        raise ValueError("extremal_eigs requires a symmetric matrix")
    lam_max = _power_iteration(H)
    shift = lam_max if lam_max > 0 else 1.0
    lam_min = shift - _power_iteration(shift * np.eye(H.shape[0]) - H)
    return lam_max * (1.0 + 1e-8), lam_min * (1.0 - 1e-8)


def dare(A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray,
         tol: float = 1e-12, max_iter: int = 100_000) -> np.ndarray:
    """Fixed point of the discrete algebraic Riccati equation by iterating
    the Riccati recursion from P = Q until the sup-norm update is <= tol."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    P = Q.copy()
    for _ in range(max_iter):
        BtP = B.T @ P
        gain = np.linalg.solve(R + BtP @ B, BtP @ A)
        P_next = A.T @ P @ A - A.T @ P @ B @ gain + Q
        P_next = 0.5 * (P_next + P_next.T)
        if float(np.max(np.abs(P_next - P))) <= tol:
            return P_next
        P = P_next
    raise RuntimeError("Riccati recursion did not converge: (A, B) likely non-stabilizable")


def dare_residual(A, B, Q, R, P) -> float:
    """Sup-norm defect of P in the defining Riccati equation."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    P = np.atleast_2d(np.asarray(P, dtype=float))
    BtP = B.T @ P
    gain = np.linalg.solve(R + BtP @ B, BtP @ A)
    return float(np.max(np.abs(A.T @ P @ A - P - A.T @ P @ B @ gain + Q)))


def lqr_gain(A, B, Q, R) -> np.ndarray:
    """Infinite-horizon LQR feedback K (u = -K x) via the Riccati fixed point."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    P = dare(A, B, Q, R)
    BtP = B.T @ P
    return np.linalg.solve(np.atleast_2d(np.asarray(R, dtype=float)) + BtP @ B, BtP @ A)
