"""Scenario configuration, the closed-loop driver, metrics and trace files."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from taxicbf.control.mpc import MpcCbfController, MpcConfig
from taxicbf.control.pid import PidCbfController, PidGains
from taxicbf.errors import TaxiCbfError, ValidationError
from taxicbf.geo_graph import (
    DEFAULT_MAX_TURN_DEG,
    TaxiRoute,
    build_undirected,
    expand_directed,
    load_airport_map,
    shortest_taxi_path,
)
from taxicbf.safety import (
    DEFAULT_SENSING_RADIUS,
    BarrierGains,
    Obstacle,
    clearance,
    obstacle_chain,
    tracking_chain,
    tracking_terms,
)
from taxicbf.trajectory import (
    GeometricPath,
    ReferenceTrajectory,
    fillet_waypoints,
    ref_at,
    sample_reference,
)
from taxicbf.vehicle import VehicleParams, rk4_step

CONTROLLERS = ("mpc_cbf", "pid_cbf", "mpc_no_ref_cbf")
STATUSES = ("completed", "safety_violation", "fallback_engaged", "timeout")
SAFETY_TOL = 1e-6
SLACK_TOL = 1e-9
DEFAULT_WIND = 0.5


def default_map_path() -> str:
    return str(resources.files("taxicbf") / "data" / "airport.json")


def bundled_scenario(name: str) -> str:
    """Path of one of the packaged scenarios (``nominal``, ``crosswind``, ``crosswind_obstacles``)."""
    path = resources.files("taxicbf") / "data" / "scenarios" / f"{name}.json"
    if not path.is_file():
        raise ValidationError(f"no bundled scenario named {name!r}")
    return str(path)


# ---------------------------------------------------------------- configuration


@dataclass(frozen=True)
class ObstacleSpec:
    """An obstacle given either by coordinates or by a time on the reference."""

    id: str
    radius: float = 1.0
    x: float | None = None
    y: float | None = None
    on_trajectory_at_t: float | None = None

    def __post_init__(self):
        by_xy = self.x is not None and self.y is not None
        by_t = self.on_trajectory_at_t is not None
        if by_xy == by_t or (self.x is None) != (self.y is None):
            raise ValidationError(f"obstacle {self.id!r}: give either x and y or on_trajectory_at_t")
        if not self.radius >= 0:
            raise ValidationError(f"obstacle {self.id!r}: radius must be non-negative")
        if by_t and self.on_trajectory_at_t < 0:
            raise ValidationError(f"obstacle {self.id!r}: on_trajectory_at_t must be non-negative")


@dataclass(frozen=True)
class ScenarioConfig:
    route: tuple[str, str]
    map_path: str = field(default_factory=default_map_path)
    speed: float = 5.0
    turning_radius: float = 15.0
    controller: str = "mpc_cbf"
    obstacles: tuple = ()
    wind_force: tuple[float, float] = (0.0, 0.0)
    duration: float | None = None
    seed: int = 0
    sim_dt: float = 0.01
    control_dt: float = 0.1
    reference_dt: float = 0.05
    max_turn_deg: float = DEFAULT_MAX_TURN_DEG
    sensing_radius: float = DEFAULT_SENSING_RADIUS
    vehicle: VehicleParams = VehicleParams()
    barrier: BarrierGains = BarrierGains()
    mpc: MpcConfig = MpcConfig()
    pid: PidGains = PidGains()

    def __post_init__(self):
        if self.controller not in CONTROLLERS:
            raise ValidationError(f"controller must be one of {CONTROLLERS}, got {self.controller!r}")
        for name in ("speed", "turning_radius", "sim_dt", "control_dt", "reference_dt", "sensing_radius"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValidationError(f"{name} must be a positive number")
        if self.duration is not None and not (math.isfinite(self.duration) and self.duration >= 0):
            raise ValidationError("duration must be a non-negative number")
        if self.sim_dt > self.control_dt + 1e-12:
            raise ValidationError("sim_dt must not exceed control_dt")
        ratio = self.control_dt / self.sim_dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValidationError("control_dt must be an integer multiple of sim_dt")
        if len(self.wind_force) != 2 or not all(math.isfinite(w) for w in self.wind_force):
            raise ValidationError("wind_force must be a finite 2-vector")
        ids = [o.id for o in self.obstacles]
        if len(set(ids)) != len(ids):
            raise ValidationError("obstacle ids must be unique")

    def with_controller(self, controller: str) -> "ScenarioConfig":
        return dataclasses.replace(self, controller=controller)


_TOP_FIELDS = {
    "map", "route", "speed", "turning_radius", "controller", "obstacles", "wind_force",
    "duration", "seed", "sim_dt", "control_dt", "reference_dt", "max_turn_deg",
    "sensing_radius", "vehicle", "barrier", "mpc", "pid",
}
_NESTED = {"vehicle": VehicleParams, "barrier": BarrierGains, "mpc": MpcConfig, "pid": PidGains}
_OBSTACLE_FIELDS = {"id", "x", "y", "on_trajectory_at_t", "radius"}


def _check_fields(obj, allowed, where, required=()):
    if not isinstance(obj, Mapping):
        raise ValidationError(f"{where}: expected an object")
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise ValidationError(f"{where}: unknown field(s) {', '.join(repr(u) for u in unknown)}")
    for key in required:
        if key not in obj:
            raise ValidationError(f"{where}: missing required field {key!r}")


def _nested(cls, raw, where):
    names = {f.name for f in dataclasses.fields(cls)}
    _check_fields(raw, names, where)
    kwargs = {}
    for k, v in raw.items():
        kwargs[k] = tuple(v) if isinstance(v, list) else v
    try:
        return cls(**kwargs)
    except ValidationError as exc:
        raise ValidationError(f"{where}: {exc}") from None
    except TypeError as exc:
        raise ValidationError(f"{where}: {exc}") from None


def scenario_from_dict(data: Mapping[str, Any], base_dir: str | os.PathLike | None = None) -> ScenarioConfig:
    """Validate a parsed scenario document. Obstacle placement is left unresolved."""
    _check_fields(data, _TOP_FIELDS, "scenario", required=("route",))
    route = data["route"]
    _check_fields(route, {"from", "to"}, "scenario.route", required=("from", "to"))
    kwargs: dict[str, Any] = {"route": (str(route["from"]), str(route["to"]))}
    if "map" in data:
        p = Path(str(data["map"]))
        if not p.is_absolute() and base_dir is not None:
            p = Path(base_dir) / p
        kwargs["map_path"] = str(p)
    for key in ("speed", "turning_radius", "duration", "sim_dt", "control_dt", "reference_dt",
                "max_turn_deg", "sensing_radius"):
        if key in data:
            v = data[key]
            if v is not None and (isinstance(v, bool) or not isinstance(v, (int, float))):
                raise ValidationError(f"scenario.{key}: expected a number")
            kwargs[key] = None if v is None else float(v)
    if "controller" in data:
        kwargs["controller"] = str(data["controller"])
    if "seed" in data:
        kwargs["seed"] = int(data["seed"])
    if "wind_force" in data:
        w = data["wind_force"]
        if not isinstance(w, (list, tuple)) or len(w) != 2:
            raise ValidationError("scenario.wind_force: expected [fx, fy] in newtons")
        kwargs["wind_force"] = (float(w[0]), float(w[1]))
    obstacles = []
    for i, raw in enumerate(data.get("obstacles", [])):
        where = f"scenario.obstacles[{i}]"
        _check_fields(raw, _OBSTACLE_FIELDS, where, required=("id",))
        try:
            obstacles.append(ObstacleSpec(
                id=str(raw["id"]),
                radius=float(raw.get("radius", 1.0)),
                x=None if raw.get("x") is None else float(raw["x"]),
                y=None if raw.get("y") is None else float(raw["y"]),
                on_trajectory_at_t=None if raw.get("on_trajectory_at_t") is None else float(raw["on_trajectory_at_t"]),
            ))
        except ValidationError as exc:
            raise ValidationError(f"{where}: {exc}") from None
    kwargs["obstacles"] = tuple(obstacles)
    for key, cls in _NESTED.items():
        if key in data:
            kwargs[key] = _nested(cls, data[key], f"scenario.{key}")
    try:
        return ScenarioConfig(**kwargs)
    except ValidationError as exc:
        raise ValidationError(f"scenario: {exc}") from None


@dataclass(frozen=True)
class Scenario:
    """A validated config together with its planned route, reference and placed obstacles."""

    config: ScenarioConfig
    route: TaxiRoute
    path: GeometricPath
    traj: ReferenceTrajectory
    obstacles: tuple


def prepare(cfg: ScenarioConfig) -> Scenario:
    """Plan the route, fillet it, sample the reference and place the obstacles."""
    airport = load_airport_map(cfg.map_path)
    dg = expand_directed(build_undirected(airport), cfg.max_turn_deg)
    route = shortest_taxi_path(dg, *cfg.route)
    path = fillet_waypoints(route, cfg.turning_radius)
    traj = sample_reference(path, cfg.speed, cfg.reference_dt)
    placed = []
    for spec in cfg.obstacles:
        if spec.on_trajectory_at_t is not None:
            if spec.on_trajectory_at_t > traj.duration:
                raise ValidationError(
                    f"obstacle {spec.id!r}: on_trajectory_at_t={spec.on_trajectory_at_t} is beyond "
                    f"the reference duration {traj.duration:.3f} s"
                )
            p = ref_at(traj, spec.on_trajectory_at_t).p
            placed.append(Obstacle(spec.id, (float(p[0]), float(p[1])), spec.radius))
        else:
            placed.append(Obstacle(spec.id, (spec.x, spec.y), spec.radius))
    return Scenario(cfg, route, path, traj, tuple(sorted(placed, key=lambda o: o.id)))


def load_scenario(path) -> Scenario:
    """Parse, validate and resolve a scenario file."""
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    return prepare(scenario_from_dict(data, base_dir=Path(path).parent))


# ---------------------------------------------------------------- traces and metrics


@dataclass
class TraceLog:
    obstacle_ids: tuple
    # per obstacle: h_o at or below this value means the obstacle is within sensing range
    sense_h: tuple = ()
    t: list = field(default_factory=list)
    state: list = field(default_factory=list)
    u: list = field(default_factory=list)
    h_ref: list = field(default_factory=list)
    h_o: list = field(default_factory=list)
    psi_ref: list = field(default_factory=list)
    psi_o: list = field(default_factory=list)
    slack: list = field(default_factory=list)
    fallback: list = field(default_factory=list)
    ref_p: list = field(default_factory=list)
    completed: bool = False
    status: str = "timeout"

    def __len__(self):
        return len(self.t)

    def append(self, t, x, u, h_ref, psi_ref, h_o, psi_o, slack, fallback, ref_p):
        self.t.append(t)
        self.state.append(np.array(x, dtype=float))
        self.u.append(np.array(u, dtype=float))
        self.h_ref.append(h_ref)
        self.psi_ref.append(psi_ref)
        self.h_o.append(tuple(h_o))
        self.psi_o.append(tuple(psi_o))
        self.slack.append(slack)
        self.fallback.append(bool(fallback))
        self.ref_p.append(np.array(ref_p, dtype=float))


@dataclass
class Metrics:
    mean_error: float
    max_error: float
    min_h_o: dict
    min_h_ref: float
    min_h_ref_unflagged: float
    control_effort: float
    completion_time: float | None
    completed: bool
    fallback_steps: int
    slack_steps: int
    status: str

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def sensing_thresholds(obstacles, gains: BarrierGains, sensing_radius: float) -> tuple:
    """h_o value at the sensing range of each obstacle (h_o is half the squared-distance margin)."""
    return tuple(0.5 * (sensing_radius**2 - clearance(o, gains) ** 2) for o in obstacles)


def conflict_flags(trace: TraceLog) -> list:
    """Obstacle-conflict intervals.

    A step is in conflict when tracking slack is in use while some obstacle is
    sensed; the interval extends until the vehicle is back in the tube.
    """
    flags = []
    prev = False
    sense = trace.sense_h
    for s, h, h_o in zip(trace.slack, trace.h_ref, trace.h_o):
        sensed = any(v <= lim for v, lim in zip(h_o, sense))
        cur = (s > SLACK_TOL and sensed) or (prev and h < 0.0)
        flags.append(cur)
        prev = cur
    return flags


def terminal_status(trace: TraceLog, completed: bool) -> str:
    if any(min(h, default=math.inf) < -SAFETY_TOL for h in trace.h_o):
        return "safety_violation"
    for h, flag in zip(trace.h_ref, conflict_flags(trace)):
        if h < -SAFETY_TOL and not flag:
            return "safety_violation"
    if any(trace.fallback):
        return "fallback_engaged"
    return "completed" if completed else "timeout"


def compute_metrics(trace: TraceLog, sim_dt: float) -> Metrics:
    """Summaries of a trace; every value is recomputable from the trace alone."""
    completed = trace.completed
    n = len(trace)
    if n:
        err = np.array([math.hypot(*(s[0:2] - r)) for s, r in zip(trace.state, trace.ref_p)])
        mean_error, max_error = float(err.mean()), float(err.max())
        effort = float(sum(float(u @ u) for u in trace.u) * sim_dt)
    else:
        mean_error = max_error = effort = 0.0
    min_h_o = {
        oid: float(min(h[j] for h in trace.h_o)) if n else math.inf
        for j, oid in enumerate(trace.obstacle_ids)
    }
    flags = conflict_flags(trace)
    unflagged = [h for h, f in zip(trace.h_ref, flags) if not f]
    return Metrics(
        mean_error=mean_error,
        max_error=max_error,
        min_h_o=min_h_o,
        min_h_ref=float(min(trace.h_ref)) if n else math.inf,
        min_h_ref_unflagged=float(min(unflagged)) if unflagged else math.inf,
        control_effort=effort,
        completion_time=trace.t[-1] if (completed and n) else None,
        completed=bool(completed),
        fallback_steps=int(sum(trace.fallback)),
        slack_steps=int(sum(1 for s in trace.slack if s > SLACK_TOL)),
        status=terminal_status(trace, completed),
    )


# ---------------------------------------------------------------- closed loop


def make_controller(sc: Scenario):
    cfg = sc.config
    if cfg.controller == "pid_cbf":
        ctrl = PidCbfController(sc.traj, sc.obstacles, cfg.barrier, cfg.vehicle, cfg.pid, cfg.sensing_radius)
        return lambda x, t: ctrl(x, t, cfg.control_dt)
    mpc_cfg = dataclasses.replace(
        cfg.mpc, sensing_radius=cfg.sensing_radius, tracking_cbf=cfg.controller == "mpc_cbf"
    )
    return MpcCbfController(sc.traj, sc.obstacles, cfg.barrier, cfg.vehicle, mpc_cfg)


def initial_state(traj: ReferenceTrajectory) -> np.ndarray:
    """On the reference start, at reference velocity and heading, not rotating."""
    r = traj.sample(0)
    return np.array([r.p[0], r.p[1], r.v[0], r.v[1], r.theta, 0.0])


def run_scenario(sc: Scenario | ScenarioConfig) -> tuple[TraceLog, Metrics]:
    """Simulate the closed loop; every plant step is recorded.

    The controller is called every ``control_dt`` and its input held while the
    plant (with wind) is integrated at ``sim_dt``. The run stops once the
    reference has ended and the vehicle is within w/2 of its terminal point,
    or when the duration cap is reached.
    """
    if isinstance(sc, ScenarioConfig):
        sc = prepare(sc)
    cfg = sc.config
    traj = sc.traj
    gains = cfg.barrier
    wind = np.array(cfg.wind_force, dtype=float)
    cap = traj.duration + 30.0 if cfg.duration is None else cfg.duration
    n_steps = int(math.floor(cap / cfg.sim_dt + 1e-9)) + 1 if cap > 0 else 0
    per_control = int(round(cfg.control_dt / cfg.sim_dt))
    end = traj.p[-1]
    ctrl = make_controller(sc)
    uses_tracking = cfg.controller != "mpc_no_ref_cbf"

    trace = TraceLog(
        obstacle_ids=tuple(o.id for o in sc.obstacles),
        sense_h=sensing_thresholds(sc.obstacles, gains, cfg.sensing_radius),
    )
    x = initial_state(traj)
    u = np.zeros(2)
    fallback = False
    completed = False
    for k in range(n_steps):
        t = k * cfg.sim_dt
        r = ref_at(traj, t)
        if k % per_control == 0:
            u_in, info = ctrl(x, t)
            u = u_in.array
            fallback = bool(info.fallback)
        h_ref, _, psi_ref = tracking_chain(x, r, gains)
        chains = [obstacle_chain(x, o, gains) for o in sc.obstacles]
        slack = 0.0
        if uses_tracking:
            c_F, rhs, _, _ = tracking_terms(x, r, gains, cfg.vehicle)
            slack = max(0.0, float(rhs - c_F * u[0]))
        trace.append(t, x, u, h_ref, psi_ref, [c[0] for c in chains], [c[2] for c in chains],
                     slack, fallback, r.p)
        if t >= traj.duration - 1e-9 and math.hypot(*(x[0:2] - end)) <= gains.w / 2:
            completed = True
            break
        x = rk4_step(x, u, wind, cfg.vehicle, cfg.sim_dt)
        if not np.all(np.isfinite(x)):
            raise TaxiCbfError(f"simulation diverged at t={t:.2f} s")
    trace.completed = completed
    metrics = compute_metrics(trace, cfg.sim_dt)
    trace.status = metrics.status
    return trace, metrics


# ---------------------------------------------------------------- files


CSV_BASE = ("t", "px", "py", "vx", "vy", "theta", "omega", "uF", "utau", "h_ref")


def _fmt(v: float) -> str:
    return "%.17g" % v


def trace_header(trace: TraceLog) -> list:
    return [*CSV_BASE, *(f"h_o_{oid}" for oid in trace.obstacle_ids), "slack", "fallback"]


def write_trace(trace: TraceLog, metrics: Metrics, path) -> tuple[str, str]:
    """Write ``<path>`` (CSV) and ``<path stem>.metrics.json``; returns both paths."""
    path = Path(path)
    meta = path.with_suffix(".metrics.json")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(trace_header(trace))
            for i in range(len(trace)):
                s, u = trace.state[i], trace.u[i]
                row = [trace.t[i], *s[0:4], s[4], s[5], u[0], u[1], trace.h_ref[i], *trace.h_o[i], trace.slack[i]]
                w.writerow([*(_fmt(v) for v in row), int(trace.fallback[i])])
        with open(meta, "w", encoding="utf-8") as fh:
            json.dump(metrics.to_dict(), fh, indent=2, sort_keys=True, allow_nan=True)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write trace to {path}: {exc.strerror or exc}") from exc
    return str(path), str(meta)


def read_trace(path, ref: ReferenceTrajectory | None = None, completed: bool = False,
               sense_h: Sequence[float] = ()) -> TraceLog:
    """Parse a trace CSV.

    Reference points are re-sampled from ``ref`` when given. The CSV does not
    carry sensing thresholds; pass ``sense_h`` (see ``sensing_thresholds``)
    to recover the conflict flags.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    ids = tuple(h[len("h_o_"):] for h in header if h.startswith("h_o_"))
    trace = TraceLog(obstacle_ids=ids, sense_h=tuple(sense_h), completed=completed)
    no = len(ids)
    for row in rows[1:]:
        vals = [float(v) for v in row[:-1]]
        t = vals[0]
        x = vals[1:7]
        u = vals[7:9]
        h_o = vals[10:10 + no]
        rp = ref_at(ref, t).p if ref is not None else (math.nan, math.nan)
        trace.append(t, x, u, vals[9], math.nan, h_o, [math.nan] * no, vals[10 + no], row[-1] == "1", rp)
    return trace


# ---------------------------------------------------------------- comparison


@dataclass
class Comparison:
    metrics: dict
    errors: dict
    verdict: str

    def to_dict(self) -> dict:
        return {
            "metrics": {k: m.to_dict() for k, m in self.metrics.items()},
            "errors": dict(self.errors),
            "verdict": self.verdict,
        }


def compare_controllers(cfg: ScenarioConfig, out_dir=None, controllers: Sequence[str] = ("mpc_cbf", "pid_cbf")) -> Comparison:
    """Run one scenario under several controllers and compare mean tracking error."""
    metrics, errors = {}, {}
    for name in controllers:
        try:
            trace, m = run_scenario(cfg.with_controller(name))
        except TaxiCbfError as exc:
            errors[name] = str(exc)
            continue
        metrics[name] = m
        if out_dir is not None:
            write_trace(trace, m, Path(out_dir) / f"{name}.csv")
    if "mpc_cbf" in metrics and "pid_cbf" in metrics:
        better = metrics["mpc_cbf"].mean_error < metrics["pid_cbf"].mean_error
        verdict = "mpc_cbf tracks better" if better else "pid_cbf tracks at least as well"
    else:
        verdict = "incomplete"
    return Comparison(metrics, errors, verdict)
