"""Planar unicycle ground dynamics driven by a longitudinal force and a yaw torque.

State vectors are laid out as ``[px, py, vx, vy, theta, omega]``. Thrust acts
along the heading, velocity is a free planar vector damped by linear friction,
and a constant wind force may be added to the translational channel of the
plant (controllers never see it).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from taxicbf.errors import ValidationError
from taxicbf.trajectory import wrap_angle

STATE_DIM = 6
INPUT_DIM = 2
PX, PY, VX, VY, TH, OM = range(6)


@dataclass(frozen=True)
class VehicleParams:
    m: float = 1.0
    I: float = 1.0
    f0: float = 0.1
    F_limits: tuple[float, float] = (0.0, 4.0)
    tau_limits: tuple[float, float] = (-10.0, 10.0)

    def __post_init__(self):
        if not (self.m > 0 and self.I > 0):
            raise ValidationError("mass and inertia must be positive")
        if self.f0 < 0:
            raise ValidationError("friction coefficient f0 must be non-negative")
        if self.F_limits[0] > self.F_limits[1] or self.tau_limits[0] > self.tau_limits[1]:
            raise ValidationError("input limits must satisfy min <= max")

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.F_limits[0], self.tau_limits[0]], dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.F_limits[1], self.tau_limits[1]], dtype=float)


@dataclass(frozen=True)
class VehicleState:
    p: tuple[float, float] = (0.0, 0.0)
    v: tuple[float, float] = (0.0, 0.0)
    theta: float = 0.0
    omega: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(self.theta))
        if not np.all(np.isfinite(self.array)):
            raise ValidationError("vehicle state must be finite")

    @property
    def array(self) -> np.ndarray:
        return np.array([self.p[0], self.p[1], self.v[0], self.v[1], self.theta, self.omega], dtype=float)

    @classmethod
    def from_array(cls, x) -> "VehicleState":
        x = np.asarray(x, dtype=float)
        return cls((float(x[0]), float(x[1])), (float(x[2]), float(x[3])), float(x[4]), float(x[5]))


@dataclass(frozen=True)
class ControlInput:
    u_F: float = 0.0
    u_tau: float = 0.0

    @property
    def array(self) -> np.ndarray:
        return np.array([self.u_F, self.u_tau], dtype=float)


@dataclass(frozen=True)
class Disturbance:
    wind_force: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not all(math.isfinite(w) for w in self.wind_force):
            raise ValidationError("wind force must be finite")

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.wind_force, dtype=float)


NO_WIND = np.zeros(2)


def _as_array(obj, n):
    if hasattr(obj, "array"):
        return obj.array
    if obj is None:
        return np.zeros(n)
    return np.asarray(obj, dtype=float)


def drift(x: np.ndarray, params: VehicleParams) -> np.ndarray:
    """Unforced vector field f(x)."""
    k = params.f0 / params.m
    return np.array([x[VX], x[VY], -k * x[VX], -k * x[VY], x[OM], 0.0])


def actuation(x: np.ndarray, params: VehicleParams) -> np.ndarray:
    """Input matrix g(x), shape (6, 2)."""
    g = np.zeros((STATE_DIM, INPUT_DIM))
    g[VX, 0] = math.cos(x[TH]) / params.m
    g[VY, 0] = math.sin(x[TH]) / params.m
    g[OM, 1] = 1.0 / params.I
    return g


def _deriv(x, u, wind, params):
    c, s = math.cos(x[TH]), math.sin(x[TH])
    k = params.f0 / params.m
    return np.array([
        x[VX],
        x[VY],
        -k * x[VX] + (u[0] * c + wind[0]) / params.m,
        -k * x[VY] + (u[0] * s + wind[1]) / params.m,
        x[OM],
        u[1] / params.I,
    ])


def dynamics_deriv(x, u, d=None, params: VehicleParams = VehicleParams()) -> np.ndarray:
    """State derivative f(x) + g(x) u + wind/m in the velocity rows."""
    x = _as_array(x, STATE_DIM)
    if not np.all(np.isfinite(x)):
        raise ValidationError("non-finite vehicle state")
    return _deriv(x, _as_array(u, INPUT_DIM), _as_array(d, 2), params)


def state_jacobian(x, u, params: VehicleParams) -> np.ndarray:
    """d(xdot)/dx; wind does not enter."""
    c, s = math.cos(x[TH]), math.sin(x[TH])
    k = params.f0 / params.m
    J = np.zeros((STATE_DIM, STATE_DIM))
    J[PX, VX] = 1.0
    J[PY, VY] = 1.0
    J[VX, VX] = -k
    J[VY, VY] = -k
    J[VX, TH] = -u[0] * s / params.m
    J[VY, TH] = u[0] * c / params.m
    J[TH, OM] = 1.0
    return J


def rk4_step(x, u, d=None, params: VehicleParams = VehicleParams(), dt: float = 0.01) -> np.ndarray:
    """Classical RK4 with ``u`` and the disturbance held over the step; heading re-wrapped."""
    if not dt > 0.0:
        raise ValidationError("dt must be positive")
    x = _as_array(x, STATE_DIM)
    u = _as_array(u, INPUT_DIM)
    w = _as_array(d, 2)
    k1 = _deriv(x, u, w, params)
    k2 = _deriv(x + 0.5 * dt * k1, u, w, params)
    k3 = _deriv(x + 0.5 * dt * k2, u, w, params)
    k4 = _deriv(x + dt * k3, u, w, params)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    out[TH] = wrap_angle(out[TH])
    return out


def rk4_step_with_jacobians(x, u, params: VehicleParams, dt: float):
    """RK4 step of the wind-free model plus its Jacobians with respect to x and u.

    The heading is left unwrapped so the result can be chained in a rollout.
    """
    gu = np.zeros((STATE_DIM, INPUT_DIM))
    gu[OM, 1] = 1.0 / params.I

    def jac_u(xs):
        g = gu.copy()
        g[VX, 0] = math.cos(xs[TH]) / params.m
        g[VY, 0] = math.sin(xs[TH]) / params.m
        return g

    eye = np.eye(STATE_DIM)
    k1 = _deriv(x, u, NO_WIND, params)
    A1 = state_jacobian(x, u, params)
    B1 = jac_u(x)
    x2 = x + 0.5 * dt * k1
    k2 = _deriv(x2, u, NO_WIND, params)
    A2s = state_jacobian(x2, u, params)
    A2 = A2s @ (eye + 0.5 * dt * A1)
    B2 = A2s @ (0.5 * dt * B1) + jac_u(x2)
    x3 = x + 0.5 * dt * k2
    k3 = _deriv(x3, u, NO_WIND, params)
    A3s = state_jacobian(x3, u, params)
    A3 = A3s @ (eye + 0.5 * dt * A2)
    B3 = A3s @ (0.5 * dt * B2) + jac_u(x3)
    x4 = x + dt * k3
    k4 = _deriv(x4, u, NO_WIND, params)
    A4s = state_jacobian(x4, u, params)
    A4 = A4s @ (eye + dt * A3)
    B4 = A4s @ (dt * B3) + jac_u(x4)
    x_next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    A = eye + (dt / 6.0) * (A1 + 2.0 * A2 + 2.0 * A3 + A4)
    B = (dt / 6.0) * (B1 + 2.0 * B2 + 2.0 * B3 + B4)
    return x_next, A, B


def saturate(u, params: VehicleParams) -> ControlInput:
    """Clamp each input channel to its actuator limits."""
    arr = _as_array(u, INPUT_DIM)
    lo, hi = params.F_limits, params.tau_limits
    return ControlInput(float(min(max(arr[0], lo[0]), lo[1])), float(min(max(arr[1], hi[0]), hi[1])))
