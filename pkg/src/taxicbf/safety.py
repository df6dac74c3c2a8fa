"""Second-order barrier chains for obstacle clearance and reference tracking.

Both barriers are position-only, so the force input first appears in the
second derivative and the torque never does. Each safety condition

    psi1_dot + a1 * psi1 >= 0,   psi1 = h_dot + a0 * h

is therefore an affine inequality ``c_F * u_F >= rhs`` with ``c_tau = 0``.
Second derivatives use the full drift (friction included).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from taxicbf.errors import ValidationError
from taxicbf.trajectory import RefSample
from taxicbf.vehicle import VehicleParams

DEFAULT_SENSING_RADIUS = 60.0


@dataclass(frozen=True)
class Obstacle:
    id: str
    p: tuple[float, float]
    radius: float = 0.0

    def __post_init__(self):
        if self.radius < 0:
            raise ValidationError(f"obstacle {self.id!r}: radius must be non-negative")

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.p, dtype=float)


@dataclass(frozen=True)
class BarrierGains:
    alpha0_o: float = 10.0
    alpha1_o: float = 10.0
    alpha0_ref: float = 10.0
    alpha1_ref: float = 10.0
    delta: float = 10.0
    w: float = 8.0
    # assumed bound on the norm of unmodeled disturbance forces (N); tightens
    # both conditions by their worst case, zero recovers the nominal ones
    disturbance_bound: float = 0.0

    def __post_init__(self):
        if min(self.alpha0_o, self.alpha1_o, self.alpha0_ref, self.alpha1_ref) <= 0:
            raise ValidationError("class-K slopes must be positive")
        if self.delta <= 0 or self.w <= 0:
            raise ValidationError("safety distance and tube half-width must be positive")
        if not self.disturbance_bound >= 0:
            raise ValidationError("disturbance bound must be non-negative")


@dataclass(frozen=True)
class SafetyConstraint:
    """``c_F * u_F + c_tau * u_tau >= rhs``."""

    c_F: float
    c_tau: float
    rhs: float
    tag: str
    slack_allowed: bool

    def margin(self, u) -> float:
        u = np.asarray(getattr(u, "array", u), dtype=float)
        return self.c_F * u[0] + self.c_tau * u[1] - self.rhs


def _x(x):
    return np.asarray(getattr(x, "array", x), dtype=float)


def clearance(o: Obstacle, gains: BarrierGains) -> float:
    return gains.delta + o.radius


def obstacle_chain(x, o: Obstacle, gains: BarrierGains):
    """Return ``(h, h_dot, psi1)`` for a static obstacle."""
    x = _x(x)
    d = o.center - x[0:2]
    dist = clearance(o, gains)
    h = 0.5 * (d @ d - dist**2)
    h_dot = -(d @ x[2:4])
    return h, h_dot, h_dot + gains.alpha0_o * h


def tracking_chain(x, r: RefSample, gains: BarrierGains):
    """Return ``(h, h_dot, psi1)`` for the moving reference tube."""
    x = _x(x)
    e = x[0:2] - r.p
    h = 0.5 * (gains.w**2 - e @ e)
    h_dot = e @ (r.v - x[2:4])
    return h, h_dot, h_dot + gains.alpha0_ref * h


def obstacle_terms(x, o: Obstacle, gains: BarrierGains, params: VehicleParams):
    """Constraint coefficients and their state gradients.

    Returns ``(c_F, rhs, dc_F/dx, drhs/dx)`` for ``c_F(x) u_F >= rhs(x)``.
    """
    x = _x(x)
    p, v, th = x[0:2], x[2:4], x[4]
    e = np.array([math.cos(th), math.sin(th)])
    e_perp = np.array([-e[1], e[0]])
    d = o.center - p
    k = params.f0 / params.m
    A = gains.alpha0_o + gains.alpha1_o
    B = gains.alpha0_o * gains.alpha1_o
    dist = clearance(o, gains)
    dv = d @ v
    c_F = -(d @ e) / params.m
    rhs = -(v @ v) - k * dv + A * dv - 0.5 * B * (d @ d - dist**2)
    dc = np.zeros(6)
    dc[0:2] = e / params.m
    dc[4] = -(d @ e_perp) / params.m
    dr = np.zeros(6)
    dr[0:2] = k * v - A * v + B * d
    dr[2:4] = -2.0 * v - k * d + A * d
    if gains.disturbance_bound > 0:
        n = math.sqrt(d @ d)
        rhs += n * gains.disturbance_bound / params.m
        if n > 0:
            dr[0:2] -= d / n * gains.disturbance_bound / params.m
    return c_F, rhs, dc, dr


def tracking_terms(x, r: RefSample, gains: BarrierGains, params: VehicleParams):
    """Same as :func:`obstacle_terms` for the reference-tracking barrier."""
    x = _x(x)
    p, v, th = x[0:2], x[2:4], x[4]
    e = np.array([math.cos(th), math.sin(th)])
    e_perp = np.array([-e[1], e[0]])
    err = p - r.p
    rel = v - r.v
    k = params.f0 / params.m
    A = gains.alpha0_ref + gains.alpha1_ref
    B = gains.alpha0_ref * gains.alpha1_ref
    c_F = -(err @ e) / params.m
    rhs = (rel @ rel) - err @ r.a - k * (err @ v) + A * (err @ rel) - 0.5 * B * (gains.w**2 - err @ err)
    dc = np.zeros(6)
    dc[0:2] = -e / params.m
    dc[4] = -(err @ e_perp) / params.m
    dr = np.zeros(6)
    dr[0:2] = -r.a - k * v + A * rel + B * err
    dr[2:4] = 2.0 * rel - k * err + A * err
    if gains.disturbance_bound > 0:
        n = math.sqrt(err @ err)
        rhs += n * gains.disturbance_bound / params.m
        if n > 0:
            dr[0:2] += err / n * gains.disturbance_bound / params.m
    return c_F, rhs, dc, dr


def obstacle_values(X, o: Obstacle, gains: BarrierGains, params: VehicleParams):
    """``(c_F, rhs)`` of :func:`obstacle_terms` for every row of a state array ``X``."""
    X = np.atleast_2d(X)
    v, th = X[:, 2:4], X[:, 4]
    d = o.center - X[:, 0:2]
    k = params.f0 / params.m
    A = gains.alpha0_o + gains.alpha1_o
    B = gains.alpha0_o * gains.alpha1_o
    dd = np.einsum("ij,ij->i", d, d)
    dv = np.einsum("ij,ij->i", d, v)
    c_F = -(d[:, 0] * np.cos(th) + d[:, 1] * np.sin(th)) / params.m
    rhs = -np.einsum("ij,ij->i", v, v) - k * dv + A * dv - 0.5 * B * (dd - clearance(o, gains) ** 2)
    if gains.disturbance_bound > 0:
        rhs = rhs + np.sqrt(dd) * gains.disturbance_bound / params.m
    return c_F, rhs


def tracking_values(X, P, V, Acc, gains: BarrierGains, params: VehicleParams):
    """``(c_F, rhs)`` of :func:`tracking_terms` row by row, references given as arrays."""
    X = np.atleast_2d(X)
    v, th = X[:, 2:4], X[:, 4]
    err = X[:, 0:2] - P
    rel = v - V
    k = params.f0 / params.m
    A = gains.alpha0_ref + gains.alpha1_ref
    B = gains.alpha0_ref * gains.alpha1_ref
    ee = np.einsum("ij,ij->i", err, err)
    c_F = -(err[:, 0] * np.cos(th) + err[:, 1] * np.sin(th)) / params.m
    rhs = (np.einsum("ij,ij->i", rel, rel) - np.einsum("ij,ij->i", err, Acc)
           - k * np.einsum("ij,ij->i", err, v) + A * np.einsum("ij,ij->i", err, rel)
           - 0.5 * B * (gains.w**2 - ee))
    if gains.disturbance_bound > 0:
        rhs = rhs + np.sqrt(ee) * gains.disturbance_bound / params.m
    return c_F, rhs


def obstacle_constraint(x, o: Obstacle, gains: BarrierGains, params: VehicleParams) -> SafetyConstraint:
    c_F, rhs, _, _ = obstacle_terms(x, o, gains, params)
    return SafetyConstraint(float(c_F), 0.0, float(rhs), f"obstacle:{o.id}", False)


def tracking_constraint(x, r: RefSample, gains: BarrierGains, params: VehicleParams) -> SafetyConstraint:
    c_F, rhs, _, _ = tracking_terms(x, r, gains, params)
    return SafetyConstraint(float(c_F), 0.0, float(rhs), "tracking", True)


def sensed_obstacles(x, obstacles: Iterable[Obstacle], sensing_radius: float) -> list:
    """Obstacles within range, ordered by id; duplicate ids are rejected."""
    obstacles = list(obstacles)
    ids = [o.id for o in obstacles]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"duplicate obstacle ids in {sorted(ids)}")
    p = _x(x)[0:2]
    near = [o for o in obstacles if np.linalg.norm(o.center - p) <= sensing_radius]
    return sorted(near, key=lambda o: o.id)


def collect_constraints(
    x,
    obstacles: Sequence[Obstacle],
    r: RefSample | None,
    gains: BarrierGains,
    params: VehicleParams,
    sensing_radius: float = DEFAULT_SENSING_RADIUS,
) -> list:
    """Obstacle constraints (id ascending) followed by the tracking constraint.

    Passing ``r=None`` omits the tracking constraint.
    """
    out = [obstacle_constraint(x, o, gains, params) for o in sensed_obstacles(x, obstacles, sensing_radius)]
    if r is not None:
        out.append(tracking_constraint(x, r, gains, params))
    return out
