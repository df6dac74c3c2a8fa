"""Model-free PID baseline and the barrier-function QP filter applied to it."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from taxicbf.control.qp import QpProblem, solve_qp
from taxicbf.errors import QpInfeasibleError, ValidationError
from taxicbf.safety import DEFAULT_SENSING_RADIUS, SafetyConstraint, collect_constraints
from taxicbf.trajectory import RefSample, ref_at, wrap_angle
from taxicbf.vehicle import ControlInput, VehicleParams, saturate


@dataclass(frozen=True)
class PidGains:
    K_s: float = 1.0
    K_a: float = 0.001
    K_pF: float = 1.0
    K_iF: float = 0.5
    K_al: float = 1.0
    K_t: float = 0.01
    K_pT: float = 0.001
    K_dT: float = 0.22
    integral_clamp: float = 10.0

    def __post_init__(self):
        vals = (self.K_s, self.K_a, self.K_pF, self.K_iF, self.K_al, self.K_t, self.K_pT, self.K_dT)
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError("PID gains must be finite")
        if not self.integral_clamp > 0:
            raise ValidationError("integral clamp must be positive")


@dataclass(frozen=True)
class PidState:
    integral: float = 0.0
    prev_e_T: float = 0.0
    initialized: bool = False


def cross2(a, b) -> float:
    """z-component of the planar cross product."""
    return float(a[0] * b[1] - a[1] * b[0])


def pid_control(x, r: RefSample, gains: PidGains, st: PidState, dt: float):
    """Return the unsaturated PID input and the updated controller memory."""
    if not dt > 0:
        raise ValidationError("dt must be positive")
    x = np.asarray(getattr(x, "array", x), dtype=float)
    p_theta = np.array([math.cos(r.theta), math.sin(r.theta)])
    p_diff = x[0:2] - r.p
    s_ref = math.hypot(r.v[0], r.v[1])
    e_F = gains.K_s * (s_ref - math.hypot(x[2], x[3])) + gains.K_a * float(p_diff @ p_theta)
    e_T = gains.K_al * wrap_angle(r.theta - x[4]) - gains.K_t * cross2(-p_diff, p_theta)

    clamp = gains.integral_clamp
    integral = min(max(st.integral + e_F * dt, -clamp), clamp)
    de_T = (e_T - st.prev_e_T) / dt if st.initialized else 0.0
    u = ControlInput(gains.K_pF * e_F + gains.K_iF * integral, gains.K_pT * e_T + gains.K_dT * de_T)
    return u, PidState(integral=integral, prev_e_T=e_T, initialized=True)


@dataclass(frozen=True)
class FilterInfo:
    dropped_tracking: bool = False
    fallback: bool = False


def _project(u_nom, constraints, params):
    if constraints:
        A = np.array([[c.c_F, c.c_tau] for c in constraints])
        b = np.array([c.rhs for c in constraints])
    else:
        A = b = None
    qp = QpProblem(np.eye(2), -u_nom, A, b, params.lower, params.upper)
    return solve_qp(qp, z0=u_nom).z


def filter_with_info(u_pid, constraints: Sequence[SafetyConstraint], params: VehicleParams):
    """Minimally modify ``u_pid`` to satisfy every constraint and the input box.

    On infeasibility the slack-allowed constraints are dropped first; if the
    rest is still infeasible, maximum braking ``(F_min, 0)`` is returned.
    """
    u_nom = np.asarray(getattr(u_pid, "array", u_pid), dtype=float)
    constraints = list(constraints)
    try:
        z = _project(u_nom, constraints, params)
        return ControlInput(float(z[0]), float(z[1])), FilterInfo()
    except QpInfeasibleError:
        pass
    hard = [c for c in constraints if not c.slack_allowed]
    try:
        z = _project(u_nom, hard, params)
        return ControlInput(float(z[0]), float(z[1])), FilterInfo(dropped_tracking=True)
    except QpInfeasibleError:
        return ControlInput(params.F_limits[0], 0.0), FilterInfo(dropped_tracking=True, fallback=True)


def pid_cbf_filter(u_pid, constraints: Sequence[SafetyConstraint], params: VehicleParams) -> ControlInput:
    return filter_with_info(u_pid, constraints, params)[0]


class PidCbfController:
    """PID followed by the safety filter; keeps the PID memory between calls."""

    def __init__(self, traj, obstacles, gains_cbf, params, pid_gains: PidGains = PidGains(),
                 sensing_radius: float | None = None):
        self.traj = traj
        self.obstacles = list(obstacles)
        self.gains = gains_cbf
        self.params = params
        self.pid_gains = pid_gains
        self.sensing_radius = DEFAULT_SENSING_RADIUS if sensing_radius is None else sensing_radius
        self.state = PidState()

    def reset(self):
        self.state = PidState()

    def __call__(self, x, t, dt):
        r = ref_at(self.traj, t)
        u_pid, self.state = pid_control(x, r, self.pid_gains, self.state, dt)
        cons = collect_constraints(x, self.obstacles, r, self.gains, self.params, self.sensing_radius)
        return filter_with_info(u_pid, cons, self.params)
