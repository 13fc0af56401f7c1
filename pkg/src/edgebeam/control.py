"""Finite-horizon MPC over the condensed input-only QP, plus the Kalman
state estimator whose state migrates with the controller actor.

Reference tracking is the shifted-equilibrium formulation: the target state
is (setpoint, 0, 0) with zero equilibrium input, so the QP decision variables
are the actual beam-velocity commands and the box U applies unshifted.

State constraints are soft. Each solve inspects the warm-start trajectory,
selects the predicted-state components that violate their bounds and folds a
quadratic penalty on exactly those rows into the Hessian and gradient. The
projection step therefore stays a plain box over inputs; hard situations
(predictions pushing past the beam end) surface as worse conditioning and
higher iteration counts rather than infeasibility.

ControllerState serialization (the migration wire format) is a fixed
little-endian layout:

    magic   4 bytes  b"EBC1"
    run_id  u64      trace metadata
    seq     u64      samples processed so far
    x_hat   3 x f64
    p_cov   9 x f64  row-major
    setpoint f64
    last_u   f64
    warm_len u32
    warm     warm_len x f64
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import qp
from .plant import Measurement, PlantParams, zoh_matrices

STATE_MAGIC = b"EBC1"


@dataclass
class MpcConfig:
    h: float = 0.05
    horizon: int = 12
    q_diag: tuple[float, float, float] = (100.0, 1.0, 1.0)
    r_weight: float = 1.0
    u_min: float = -3.0
    u_max: float = 3.0
    # absolute bounds per state component; inf disables the soft constraint
    x_bounds: tuple[float, float, float] = (0.55, np.inf, 0.20)
    soft_penalty: float = 1e4
    max_iter_cap: int = 2000
    tol: float = 1e-6

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.u_min > self.u_max:
            raise ValueError("u_min > u_max")


@dataclass
class KalmanConfig:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    W: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        if np.any(np.linalg.eigvalsh(np.atleast_2d(self.V)) <= 0):
            raise ValueError("measurement covariance must be positive definite")


def default_kalman_config(params: PlantParams, h: float) -> KalmanConfig:
    A, B = zoh_matrices(params, h)
    C = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    W = np.diag([1e-12, params.sigma_proc ** 2, 1e-12])
    V = np.diag([max(params.sigma_pos, 1e-6) ** 2, max(params.sigma_ang, 1e-6) ** 2])
    return KalmanConfig(A=A, B=B, C=C, W=W, V=V)


@dataclass
class ControllerState:
    x_hat: np.ndarray
    p_cov: np.ndarray
    setpoint: float
    last_u: float
    warm: np.ndarray
    run_id: int = 0
    step_seq: int = 0

    def to_bytes(self) -> bytes:
        parts = [
            STATE_MAGIC,
            struct.pack("<QQ", self.run_id, self.step_seq),
            np.asarray(self.x_hat, dtype="<f8").tobytes(),
            np.asarray(self.p_cov, dtype="<f8").tobytes(),
            struct.pack("<dd", self.setpoint, self.last_u),
            struct.pack("<I", len(self.warm)),
            np.asarray(self.warm, dtype="<f8").tobytes(),
        ]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ControllerState":
        if blob[:4] != STATE_MAGIC:
            raise ValueError("bad controller-state magic")
        off = 4
        run_id, step_seq = struct.unpack_from("<QQ", blob, off)
        off += 16
        x_hat = np.frombuffer(blob, dtype="<f8", count=3, offset=off).copy()
        off += 24
        p_cov = np.frombuffer(blob, dtype="<f8", count=9, offset=off).copy().reshape(3, 3)
        off += 72
        setpoint, last_u = struct.unpack_from("<dd", blob, off)
        off += 16
        (warm_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        warm = np.frombuffer(blob, dtype="<f8", count=warm_len, offset=off).copy()
        return cls(x_hat=x_hat, p_cov=p_cov, setpoint=setpoint, last_u=last_u,
                   warm=warm, run_id=run_id, step_seq=step_seq)


def kalman_predict(cs: ControllerState, u: float, kcfg: KalmanConfig) -> ControllerState:
    cs.x_hat = kcfg.A @ cs.x_hat + kcfg.B * u
    P = kcfg.A @ cs.p_cov @ kcfg.A.T + kcfg.W
    cs.p_cov = 0.5 * (P + P.T)
    return cs


def kalman_update(cs: ControllerState, y: np.ndarray, kcfg: KalmanConfig) -> ControllerState:
    C, V = kcfg.C, kcfg.V
    S = C @ cs.p_cov @ C.T + V
    try:
        K = np.linalg.solve(S, C @ cs.p_cov).T
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular innovation covariance") from exc
    cs.x_hat = cs.x_hat + K @ (y - C @ cs.x_hat)
    P = (np.eye(3) - K @ C) @ cs.p_cov
    cs.p_cov = 0.5 * (P + P.T)
    return cs


def steady_kalman_gain(kcfg: KalmanConfig) -> np.ndarray:
    """Stationary filter gain from the dual Riccati fixed point."""
    p_pred = qp.dare(kcfg.A.T, kcfg.C.T, kcfg.W, kcfg.V)
    S = kcfg.C @ p_pred @ kcfg.C.T + kcfg.V
    return np.linalg.solve(S, kcfg.C @ p_pred).T


@dataclass
class StepReport:
    iterations: int
    converged: bool
    residual: float
    setpoint: float


class CondensedMpc:
    """Prediction matrices and the Hessian factory for the input-only QP.

    For stacked inputs U the predicted states are X = Phi x0 + Gam U (states
    x_1..x_T in shifted coordinates), and the base quadratic cost is
    0.5 U'H0 U + (M_g x0)'U with H0 = Gam'Qbar Gam + R I and
    Qbar = blockdiag(Q, ..., Q, P_terminal).
    """

    def __init__(self, cfg: MpcConfig, A: np.ndarray, B: np.ndarray,
                 terminal: np.ndarray | None = None):
        self.cfg = cfg
        self.A = np.asarray(A, dtype=float)
        self.B = np.asarray(B, dtype=float).reshape(3)
        T = cfg.horizon
        Q = np.diag(cfg.q_diag)
        P = terminal if terminal is not None else qp.dare(self.A, self.B, Q, np.array([[cfg.r_weight]]))
        self.terminal = P

        powers = [np.eye(3)]
        for _ in range(T):
            powers.append(self.A @ powers[-1])
        self.phi = np.vstack(powers[1:])                       # (3T, 3)
        gam = np.zeros((3 * T, T))
        for i in range(T):                                     # block row for x_{i+1}
            for j in range(i + 1):
                gam[3 * i:3 * i + 3, j] = powers[i - j] @ self.B
        self.gam = gam

        qbar = np.zeros((3 * T, 3 * T))
        for i in range(T - 1):
            qbar[3 * i:3 * i + 3, 3 * i:3 * i + 3] = Q
        qbar[-3:, -3:] = P
        self.qbar = qbar

        h0 = gam.T @ qbar @ gam + cfg.r_weight * np.eye(T)
        self.h0 = 0.5 * (h0 + h0.T)
        self.m_g = gam.T @ qbar @ self.phi                     # (T, 3)
        # Gam'Qbar Gam and the penalty terms are PSD, so r_weight is an exact
        # strong-convexity bound for every Hessian this factory produces;
        # only the Lipschitz constant needs estimating.
        self.mu0 = cfg.r_weight
        self.l0 = qp.lipschitz_upper(self.h0)
        if self.l0 / self.mu0 > 1e12:
            raise ValueError(
                f"condensed Hessian conditioning {self.l0 / self.mu0:.3g} exceeds 1e12; "
                f"shorten the horizon or rebalance weights")
        self._eig_cache: dict[tuple[int, ...], tuple[float, float]] = {}

    def assemble(self, x_shift: np.ndarray, setpoint: float,
                 warm: np.ndarray) -> qp.QpProblem:
        """QP for the current shifted state; soft-constraint rows activate
        where the warm-start prediction violates the absolute state bounds."""
        cfg = self.cfg
        g = self.m_g @ x_shift
        h = self.h0
        l_const, mu_const = self.l0, self.mu0

        bounds = np.asarray(cfg.x_bounds)
        finite = np.isfinite(bounds)
        if finite.any() and cfg.soft_penalty > 0:
            shift = np.array([setpoint, 0.0, 0.0])
            T = cfg.horizon
            ub_abs = np.tile(bounds, T) - np.tile(shift, T)
            lb_abs = np.tile(-bounds, T) - np.tile(shift, T)
            x_pred = self.phi @ x_shift + self.gam @ warm
            hi_rows = np.flatnonzero(x_pred > ub_abs)
            lo_rows = np.flatnonzero(x_pred < lb_abs)
            if hi_rows.size or lo_rows.size:
                rows = np.concatenate([hi_rows, lo_rows])
                d = np.concatenate([ub_abs[hi_rows], lb_abs[lo_rows]])
                gam_v = self.gam[rows]
                resid0 = self.phi[rows] @ x_shift - d
                h = self.h0 + cfg.soft_penalty * gam_v.T @ gam_v
                h = 0.5 * (h + h.T)
                g = g + cfg.soft_penalty * gam_v.T @ resid0
                key = tuple(np.sort(rows))
                cached = self._eig_cache.get(key)
                if cached is None:
                    cached = (qp.lipschitz_upper(h), cfg.r_weight)
                    if len(self._eig_cache) > 512:
                        self._eig_cache.clear()
                    self._eig_cache[key] = cached
                l_const, mu_const = cached

        T = cfg.horizon
        return qp.QpProblem(H=h, g=g,
                            lb=np.full(T, cfg.u_min), ub=np.full(T, cfg.u_max),
                            L=l_const, mu=mu_const)


class MpcController:
    """One control decision per measurement pair; owns no state beyond the
    immutable problem matrices (the mutable part travels in ControllerState)."""

    def __init__(self, cfg: MpcConfig, params: PlantParams,
                 kcfg: KalmanConfig | None = None):
        self.cfg = cfg
        A, B = zoh_matrices(params, cfg.h)
        self.condensed = CondensedMpc(cfg, A, B)
        self.kcfg = kcfg if kcfg is not None else default_kalman_config(params, cfg.h)

    def new_state(self, run_id: int = 0) -> ControllerState:
        return ControllerState(
            x_hat=np.zeros(3),
            p_cov=np.diag([1e-4, 1e-2, 1e-4]),
            setpoint=0.0,
            last_u=0.0,
            warm=np.zeros(self.cfg.horizon),
            run_id=run_id,
        )

    def step(self, cs: ControllerState, meas: Measurement) -> tuple[float, StepReport]:
        """Estimate, solve, return the clamped first input. A capped solve is
        a flagged outcome, not an error: its (feasible) first input is applied."""
        cfg = self.cfg
        kalman_update(cs, np.array([meas.pos_reading, meas.ang_reading]), self.kcfg)
        x_shift = cs.x_hat - np.array([cs.setpoint, 0.0, 0.0])
        problem = self.condensed.assemble(x_shift, cs.setpoint, cs.warm)
        sol = qp.solve(problem, warm=cs.warm, max_iter=cfg.max_iter_cap, tol=cfg.tol)
        u0 = float(min(max(sol.z[0], cfg.u_min), cfg.u_max))
        cs.warm = np.concatenate([sol.z[1:], sol.z[-1:]])
        cs.last_u = u0
        kalman_predict(cs, u0, self.kcfg)
        cs.step_seq += 1
        return u0, StepReport(iterations=sol.iterations, converged=sol.converged,
                              residual=sol.residual, setpoint=cs.setpoint)
