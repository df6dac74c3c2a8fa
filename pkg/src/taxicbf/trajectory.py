"""Fillet a waypoint polyline with turning-radius arcs and sample it in time.

Samples are placed so that consecutive reference positions are exactly
``speed * dt`` apart (chord length), which keeps the discrete speed of the
reference equal to the commanded speed on arcs as well as on straight legs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.optimize import brentq

from taxicbf.errors import InfeasibleFilletError, ValidationError
from taxicbf.geo_graph import TaxiRoute

DEFAULT_DT = 0.05
DEFAULT_SPEED = 5.0
_COLLINEAR_TOL = 1e-12


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if np.ndim(w) == 0 else w


def _unit(theta: float) -> np.ndarray:
    return np.array([math.cos(theta), math.sin(theta)])


@dataclass(frozen=True)
class Line:
    start: np.ndarray
    end: np.ndarray

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.end - self.start))

    @property
    def heading(self) -> float:
        d = self.end - self.start
        return math.atan2(d[1], d[0])

    def start_heading(self) -> float:
        return self.heading

    def end_heading(self) -> float:
        return self.heading

    def curvature(self) -> float:
        return 0.0

    def point(self, s: float) -> np.ndarray:
        return self.start + (s / self.length) * (self.end - self.start)

    def tangent_angle(self, s: float) -> float:
        return self.heading


@dataclass(frozen=True)
class Arc:
    center: np.ndarray
    radius: float
    start_angle: float
    end_angle: float
    direction: str  # "ccw" or "cw"

    @property
    def sweep(self) -> float:
        """Signed swept angle, positive for ccw."""
        return self.end_angle - self.start_angle

    @property
    def length(self) -> float:
        return self.radius * abs(self.sweep)

    @property
    def _sign(self) -> float:
        return 1.0 if self.direction == "ccw" else -1.0

    def curvature(self) -> float:
        return self._sign / self.radius

    def _polar(self, s: float) -> float:
        return self.start_angle + self._sign * s / self.radius

    def point(self, s: float) -> np.ndarray:
        return self.center + self.radius * _unit(self._polar(s))

    def tangent_angle(self, s: float) -> float:
        return wrap_angle(self._polar(s) + self._sign * math.pi / 2.0)

    def start_heading(self) -> float:
        return self.tangent_angle(0.0)

    def end_heading(self) -> float:
        return self.tangent_angle(self.length)


Segment = Union[Line, Arc]


@dataclass(frozen=True)
class GeometricPath:
    segments: tuple
    turning_radius: float

    def __post_init__(self):
        if not self.segments:
            raise ValidationError("path has no segments")
        starts = np.concatenate([[0.0], np.cumsum([seg.length for seg in self.segments])])
        object.__setattr__(self, "_starts", starts)

    @property
    def length(self) -> float:
        return float(self._starts[-1])

    @property
    def arcs(self) -> list:
        return [s for s in self.segments if isinstance(s, Arc)]

    def locate(self, s: float) -> tuple[int, float]:
        s = min(max(s, 0.0), self.length)
        idx = int(np.searchsorted(self._starts, s, side="right")) - 1
        idx = min(max(idx, 0), len(self.segments) - 1)
        return idx, s - self._starts[idx]

    def point(self, s: float) -> np.ndarray:
        idx, local = self.locate(s)
        return self.segments[idx].point(local)

    def tangent_angle(self, s: float) -> float:
        idx, local = self.locate(s)
        return self.segments[idx].tangent_angle(local)

    def curvature(self, s: float) -> float:
        idx, _ = self.locate(s)
        return self.segments[idx].curvature()

    def junction_mismatch(self) -> float:
        """Largest tangent-direction jump (rad) between consecutive segments."""
        worst = 0.0
        for a, b in zip(self.segments, self.segments[1:]):
            worst = max(worst, abs(wrap_angle(b.start_heading() - a.end_heading())))
        return worst

    def junction_gap(self) -> float:
        worst = 0.0
        for a, b in zip(self.segments, self.segments[1:]):
            worst = max(worst, float(np.linalg.norm(b.point(0.0) - a.point(a.length))))
        return worst


def fillet_waypoints(route: Union[TaxiRoute, Sequence[Sequence[float]]], q: float) -> GeometricPath:
    """Replace every interior corner by an arc of radius ``q`` tangent to both legs."""
    if not q > 0.0:
        raise ValidationError(f"turning radius must be positive, got {q}")
    if isinstance(route, TaxiRoute):
        pts = np.asarray(route.points, dtype=float)
        names = list(route.waypoints)
    else:
        pts = np.asarray(route, dtype=float)
        names = [str(i) for i in range(len(pts))]
    if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
        raise ValidationError("route needs at least two planar waypoints")
    legs = np.diff(pts, axis=0)
    leg_len = np.linalg.norm(legs, axis=1)
    if np.any(leg_len <= 0.0):
        raise ValidationError("route contains repeated consecutive waypoints")
    dirs = legs / leg_len[:, None]

    n = len(pts)
    offsets = np.zeros(n)
    turns = np.zeros(n)
    for i in range(1, n - 1):
        u1, u2 = dirs[i - 1], dirs[i]
        phi = math.atan2(u1[0] * u2[1] - u1[1] * u2[0], float(u1 @ u2))
        if abs(phi) < _COLLINEAR_TOL:
            continue
        if abs(phi) >= math.pi - _COLLINEAR_TOL:
            raise InfeasibleFilletError(names[i], f"corner {names[i]!r} is a reversal")
        turns[i] = phi
        offsets[i] = q * math.tan(abs(phi) / 2.0)
    for i in range(n - 1):
        need = offsets[i] + offsets[i + 1]
        if need > leg_len[i] * (1.0 + 1e-12):
            corner = names[i + 1] if offsets[i + 1] > 0 else names[i]
            raise InfeasibleFilletError(
                corner,
                f"leg {names[i]!r}->{names[i + 1]!r} is {leg_len[i]:.3f} m but the fillets "
                f"at its ends need {need:.3f} m (radius {q})",
            )

    segments: list = []
    cursor = pts[0].copy()
    for i in range(1, n - 1):
        if turns[i] == 0.0:
            continue
        u1, u2 = dirs[i - 1], dirs[i]
        t1 = pts[i] - offsets[i] * u1
        t2 = pts[i] + offsets[i] * u2
        if np.linalg.norm(t1 - cursor) > 0.0:
            segments.append(Line(cursor, t1))
        ccw = turns[i] > 0.0
        normal = np.array([-u1[1], u1[0]]) if ccw else np.array([u1[1], -u1[0]])
        center = t1 + q * normal
        a0 = math.atan2(t1[1] - center[1], t1[0] - center[0])
        segments.append(Arc(center, float(q), a0, a0 + turns[i], "ccw" if ccw else "cw"))
        cursor = t2
    if np.linalg.norm(pts[-1] - cursor) > 0.0 or not segments:
        segments.append(Line(cursor, pts[-1].copy()))
    return GeometricPath(tuple(segments), float(q))


def reference_acceleration(theta, speed, speed_rate, kappa) -> np.ndarray:
    """Tangential plus centripetal acceleration of a moving reference point."""
    tangent = np.array([math.cos(theta), math.sin(theta)])
    normal = np.array([-math.sin(theta), math.cos(theta)])
    return speed_rate * tangent + kappa * speed**2 * normal


@dataclass(frozen=True)
class RefSample:
    t: float
    p: np.ndarray
    theta: float
    v: np.ndarray
    a: np.ndarray
    kappa: float

    @property
    def speed(self) -> float:
        return float(np.hypot(*self.v))


@dataclass(frozen=True)
class ReferenceTrajectory:
    """Uniformly time-sampled reference; per-sample quantities are stored as arrays."""

    dt: float
    speed: float
    t: np.ndarray
    p: np.ndarray
    theta: np.ndarray
    v: np.ndarray
    a: np.ndarray
    kappa: np.ndarray
    path: GeometricPath | None = None

    @property
    def duration(self) -> float:
        return float(self.t[-1])

    def __len__(self):
        return len(self.t)

    def sample(self, i: int) -> RefSample:
        return RefSample(float(self.t[i]), self.p[i].copy(), float(self.theta[i]),
                         self.v[i].copy(), self.a[i].copy(), float(self.kappa[i]))

    @property
    def samples(self) -> list:
        return [self.sample(i) for i in range(len(self))]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "px", "py", "theta", "vx", "vy", "ax", "ay", "kappa"])
            for i in range(len(self)):
                row = [self.t[i], *self.p[i], self.theta[i], *self.v[i], *self.a[i], self.kappa[i]]
                writer.writerow([repr(float(x)) for x in row])


def _next_station(path: GeometricPath, s0: float, p0: np.ndarray, step: float) -> float | None:
    """Smallest arc length s > s0 whose point lies exactly ``step`` away from p0."""
    if path.length - s0 <= step:
        return None
    idx, local = path.locate(s0)
    seg = path.segments[idx]
    if isinstance(seg, Line):
        cand = local + step
    else:
        cand = seg.radius * 2.0 * math.asin(min(1.0, step / (2.0 * seg.radius)))
        cand = local + cand
    if cand <= seg.length:
        return s0 + (cand - local)
    # chord crosses a junction; distance is monotone over such a short stretch
    hi = min(path.length, s0 + step * math.pi / 2.0)
    dist = lambda s: float(np.linalg.norm(path.point(s) - p0)) - step  # noqa: E731
    if dist(hi) < 0.0:
        return None
    return brentq(dist, s0 + step * (1.0 - 1e-9), hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)


def sample_reference(path: GeometricPath, speed: float = DEFAULT_SPEED, dt: float = DEFAULT_DT) -> ReferenceTrajectory:
    if not speed > 0.0:
        raise ValidationError(f"speed must be positive, got {speed}")
    if not dt > 0.0:
        raise ValidationError(f"dt must be positive, got {dt}")
    if dt > path.length / speed:
        raise ValidationError(
            f"dt={dt} exceeds the trajectory duration {path.length / speed:.6g} s"
        )
    step = speed * dt
    stations = [0.0]
    p_prev = path.point(0.0)
    while True:
        s = _next_station(path, stations[-1], p_prev, step)
        if s is None:
            break
        stations.append(s)
        p_prev = path.point(s)
    if stations[-1] < path.length:
        stations.append(path.length)

    k = len(stations)
    t = dt * np.arange(k)
    p = np.empty((k, 2))
    theta = np.empty(k)
    kappa = np.empty(k)
    v = np.empty((k, 2))
    a = np.empty((k, 2))
    for i, s in enumerate(stations):
        p[i] = path.point(s)
        theta[i] = path.tangent_angle(s)
        kappa[i] = path.curvature(s)
        v[i] = speed * _unit(theta[i])
        # constant commanded speed: tangential term vanishes
        a[i] = reference_acceleration(theta[i], speed, 0.0, kappa[i])
    return ReferenceTrajectory(dt=float(dt), speed=float(speed), t=t, p=p, theta=theta,
                               v=v, a=a, kappa=kappa, path=path)


def ref_at(traj: ReferenceTrajectory, t: float) -> RefSample:
    """Reference at arbitrary time; holds the final point with zero velocity after the end."""
    if t < 0.0:
        raise ValidationError(f"t must be non-negative, got {t}")
    last = len(traj) - 1
    if t > traj.t[-1]:
        return RefSample(float(t), traj.p[last].copy(), float(traj.theta[last]),
                         np.zeros(2), np.zeros(2), 0.0)
    i = min(int(t // traj.dt), last)
    if i == last or t == traj.t[i]:
        return RefSample(float(t), traj.p[i].copy(), float(traj.theta[i]),
                         traj.v[i].copy(), traj.a[i].copy(), float(traj.kappa[i]))
    lam = (t - traj.t[i]) / (traj.t[i + 1] - traj.t[i])
    p = (1.0 - lam) * traj.p[i] + lam * traj.p[i + 1]
    dtheta = wrap_angle(traj.theta[i + 1] - traj.theta[i])
    theta = wrap_angle(traj.theta[i] + lam * dtheta)
    kappa = (1.0 - lam) * traj.kappa[i] + lam * traj.kappa[i + 1]
    v = traj.speed * _unit(theta)
    a = reference_acceleration(theta, traj.speed, 0.0, kappa)
    return RefSample(float(t), p, float(theta), v, a, float(kappa))
