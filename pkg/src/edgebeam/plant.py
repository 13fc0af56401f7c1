"""Ball-and-beam physics, sensing and actuation.

Linearized dynamics: pos' = vel, vel' = k_v * angle, angle' = k_omega * u.
The chain is nilpotent, so the zero-order-hold discretization is an exact
polynomial in the step length (no matrix exponential truncation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# standard rolling-ball coefficient: -(5/7) g
DEFAULT_K_V = -(5.0 / 7.0) * 9.81


@dataclass(frozen=True)
class PlantParams:
    beam_length: float = 1.10          # m
    k_v: float = DEFAULT_K_V           # m/s^2 per rad, negative by sign convention
    k_omega: float = 0.60              # rad/s per input unit
    alpha_max: float = 0.20            # rad, actuator clamp
    sigma_pos: float = 0.001           # m, position sensor noise
    sigma_ang: float = 0.002           # rad, angle sensor noise
    sigma_proc: float = 0.010          # m/s process noise on vel per nominal step
    adc_bits: int | None = 10          # None = ideal (no quantization)
    nominal_h: float = 0.05            # s, step the process noise level refers to
    u_min_hw: float = -6.0             # hardware input range, distinct from MPC box
    u_max_hw: float = 6.0

    @property
    def half_length(self) -> float:
        return self.beam_length / 2.0


@dataclass(frozen=True)
class PlantState:
    pos: float = 0.0
    vel: float = 0.0
    angle: float = 0.0
    off_beam: bool = False


@dataclass(frozen=True)
class Measurement:
    pos_reading: float
    ang_reading: float
    stamp: int  # ns


def zoh_matrices(params: PlantParams, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact discrete (A, B) of the linear triple-integrator chain for step h."""
    kv, kw = params.k_v, params.k_omega
    A = np.array([
        [1.0, h, 0.5 * kv * h * h],
        [0.0, 1.0, kv * h],
        [0.0, 0.0, 1.0],
    ])
    B = np.array([kv * kw * h ** 3 / 6.0, kv * kw * h * h / 2.0, kw * h])
    return A, B


def step(state: PlantState, u: float, h: float, params: PlantParams,
         noise: np.random.Generator | None = None) -> PlantState:
    """Advance the plant by h seconds under constant input u.

    Process noise scales with sqrt(h / nominal_h) so the injected noise power
    per unit time does not depend on how often the plant is advanced.
    Once the ball has left the beam the state is frozen.
    """
    if state.off_beam:
        return state
    if not (math.isfinite(u) and math.isfinite(state.pos)
            and math.isfinite(state.vel) and math.isfinite(state.angle)):
        raise ValueError(f"non-finite plant step: u={u} state={state}")
    if h <= 0:
        raise ValueError(f"step length must be positive, got {h}")

    A, B = zoh_matrices(params, h)
    x = A @ np.array([state.pos, state.vel, state.angle]) + B * u
    if noise is not None and params.sigma_proc > 0:
        x[1] += noise.normal(0.0, params.sigma_proc * math.sqrt(h / params.nominal_h))
    angle = min(max(x[2], -params.alpha_max), params.alpha_max)
    off = abs(x[0]) > params.half_length
    return PlantState(pos=float(x[0]), vel=float(x[1]), angle=float(angle), off_beam=off)


def _quantize(value: float, full_range: float, bits: int | None) -> float:
    if bits is None:
        return value
    q = full_range / (2 ** bits)
    return round(value / q) * q


def measure(state: PlantState, stamp: int, params: PlantParams,
            noise: np.random.Generator | None = None) -> Measurement:
    """Noisy, quantized readings of ball position and beam angle.

    Readings saturate at the sensor range: the position sensor cannot read
    beyond the beam ends, the angle sensor beyond the actuator clamp.
    """
    pos = state.pos
    ang = state.angle
    if noise is not None:
        if params.sigma_pos > 0:
            pos += noise.normal(0.0, params.sigma_pos)
        if params.sigma_ang > 0:
            ang += noise.normal(0.0, params.sigma_ang)
    hl = params.half_length
    pos = min(max(pos, -hl), hl)
    ang = min(max(ang, -params.alpha_max), params.alpha_max)
    return Measurement(
        pos_reading=_quantize(pos, params.beam_length, params.adc_bits),
        ang_reading=_quantize(ang, 2.0 * params.alpha_max, params.adc_bits),
        stamp=stamp,
    )


def apply_actuation(u: float, params: PlantParams) -> float:
    """Clip the commanded input to the hardware range."""
    if not math.isfinite(u):
        raise ValueError(f"non-finite actuation command: {u}")
    return min(max(u, params.u_min_hw), params.u_max_hw)


class Plant:
    """Continuous plant advanced lazily along the simulation timeline.

    The held input persists between actuations (the motor is a velocity
    source), so advancing from the last touch time to `t` with one exact ZOH
    step is the true trajectory of the linear model.
    """

    def __init__(self, params: PlantParams,
                 process_rng: np.random.Generator | None = None,
                 meas_rng: np.random.Generator | None = None,
                 initial: PlantState | None = None):
        self.params = params
        self.process_rng = process_rng
        self.meas_rng = meas_rng
        self.state = initial or PlantState()
        self.held_u = 0.0
        self.last_t: int = 0
        self.off_beam_since: int | None = None

    def advance_to(self, t: int) -> None:
        if t < self.last_t:
            raise ValueError(f"plant time moved backwards: {self.last_t} -> {t}")
        if t == self.last_t:
            return
        h = (t - self.last_t) / 1e9
        was_off = self.state.off_beam
        self.state = step(self.state, self.held_u, h, self.params, self.process_rng)
        if self.state.off_beam and not was_off:
            self.off_beam_since = t
        self.last_t = t

    def read(self, t: int) -> Measurement:
        self.advance_to(t)
        return measure(self.state, t, self.params, self.meas_rng)

    def actuate(self, t: int, u: float) -> float:
        self.advance_to(t)
        self.held_u = apply_actuation(u, self.params)
        return self.held_u

    def respawn(self, t: int) -> None:
        """Place a fresh ball at the beam center (measurement comparability reset)."""
        self.advance_to(t)
        self.state = PlantState()
        self.held_u = 0.0
        self.off_beam_since = None
