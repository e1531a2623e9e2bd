"""Discrete-time kinematic bicycle model and its exact linearization.

State order is [x, y, psi, v] (positions in m, heading in rad, speed in
m/s); input order is [a, delta] (acceleration in m/s^2, front steering
angle in rad). Heading is kept unwrapped; wrap only for display.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

STATE_DIM = 4
INPUT_DIM = 2


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    psi: float
    v: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.psi, self.v], dtype=float)

    @staticmethod
    def from_array(arr) -> "VehicleState":
        x, y, psi, v = (float(c) for c in arr)
        return VehicleState(x, y, psi, v)


@dataclass(frozen=True)
class VehicleInput:
    a: float
    delta: float

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.delta], dtype=float)

    @staticmethod
    def from_array(arr) -> "VehicleInput":
        a, delta = (float(c) for c in arr)
        return VehicleInput(a, delta)


@dataclass(frozen=True)
class VehicleParams:
    """Geometry, sampling time and box bounds of the small-scale vehicle."""

    wheelbase: float = 0.15
    dt: float = 0.2
    length: float = 0.22  # collision footprint, used to abort rollouts
    v_min: float = 0.0
    v_max: float = 1.5
    a_min: float = -1.5
    a_max: float = 1.5
    delta_max: float = 0.6
    da_max: float = 1.0  # per-step bound on |a(k) - a(k-1)|
    ddelta_max: float = 0.6  # per-step bound on |delta(k) - delta(k-1)|

    def __post_init__(self):
        if self.wheelbase <= 0 or self.dt <= 0:
            raise ValueError("wheelbase and dt must be positive")
        if self.v_min > self.v_max:
            raise ValueError("v_min must not exceed v_max")
        if self.a_min > self.a_max:
            raise ValueError("a_min must not exceed a_max")
        if min(self.delta_max, self.da_max, self.ddelta_max) <= 0:
            raise ValueError("input bounds must be positive")

    @property
    def turn_radius(self) -> float:
        """Tightest kinematically feasible turn radius."""
        return self.wheelbase / math.tan(self.delta_max)

    def input_lower(self) -> np.ndarray:
        return np.array([self.a_min, -self.delta_max])

    def input_upper(self) -> np.ndarray:
        return np.array([self.a_max, self.delta_max])

    def input_rate(self) -> np.ndarray:
        return np.array([self.da_max, self.ddelta_max])


def step_array(z: np.ndarray, u: np.ndarray, p: VehicleParams) -> np.ndarray:
    """Forward-Euler step of the kinematic bicycle for raw arrays."""
    z = np.asarray(z, dtype=float)
    u = np.asarray(u, dtype=float)
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(u))):
        raise ValueError("non-finite state or input")
    x, y, psi, v = z
    a, delta = u
    return np.array(
        [
            x + p.dt * v * math.cos(psi),
            y + p.dt * v * math.sin(psi),
            psi + p.dt * (v / p.wheelbase) * math.tan(delta),
            v + p.dt * a,
        ]
    )


def step(s: VehicleState, u: VehicleInput, p: VehicleParams) -> VehicleState:
    return VehicleState.from_array(step_array(s.as_array(), u.as_array(), p))


def linearize_array(z, u, p: VehicleParams):
    """Exact Jacobians (A, B) and affine offset c of the Euler map.

    The affine model A z' + B u' + c reproduces step_array(z, u, p)
    exactly at the nominal point (z, u).
    """
    z = np.asarray(z, dtype=float)
    u = np.asarray(u, dtype=float)
    _, _, psi, v = z
    _, delta = u
    dt, L = p.dt, p.wheelbase

    A = np.eye(STATE_DIM)
    A[0, 2] = -dt * v * math.sin(psi)
    A[0, 3] = dt * math.cos(psi)
    A[1, 2] = dt * v * math.cos(psi)
    A[1, 3] = dt * math.sin(psi)
    A[2, 3] = dt * math.tan(delta) / L

    B = np.zeros((STATE_DIM, INPUT_DIM))
    B[2, 1] = dt * (v / L) / math.cos(delta) ** 2
    B[3, 0] = dt

    c = step_array(z, u, p) - A @ z - B @ u
    return A, B, c


def linearize(s: VehicleState, u: VehicleInput, p: VehicleParams):
    return linearize_array(s.as_array(), u.as_array(), p)


def nominal_inputs(states: np.ndarray, p: VehicleParams) -> np.ndarray:
    """Recover box-clipped inputs that approximately drive the given
    state sequence under the Euler model.

    states has shape (K+1, 4); the result has shape (K, 2). Used to pick
    linearization points when only a state trajectory is available.
    """
    states = np.asarray(states, dtype=float)
    k = states.shape[0] - 1
    out = np.zeros((k, INPUT_DIM))
    for i in range(k):
        v = states[i, 3]
        out[i, 0] = (states[i + 1, 3] - states[i, 3]) / p.dt
        dpsi = states[i + 1, 2] - states[i, 2]
        if abs(v) > 1e-6:
            out[i, 1] = math.atan(p.wheelbase * dpsi / (p.dt * v))
        else:
            out[i, 1] = 0.0
    lo, hi = p.input_lower(), p.input_upper()
    return np.clip(out, lo, hi)
