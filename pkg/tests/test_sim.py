import dataclasses
import json
import math

import numpy as np
import pytest

from taxicbf.control import MpcConfig
from taxicbf.errors import ValidationError
from taxicbf.safety import BarrierGains
from taxicbf.sim import (
    CSV_BASE,
    ScenarioConfig,
    TraceLog,
    bundled_scenario,
    compare_controllers,
    compute_metrics,
    conflict_flags,
    initial_state,
    load_scenario,
    prepare,
    read_trace,
    run_scenario,
    scenario_from_dict,
    sensing_thresholds,
    terminal_status,
    write_trace,
)
from taxicbf.vehicle import VehicleParams


def write_json(tmp_path, data, name="s.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


def short(cfg=None, **kw):
    cfg = cfg or ScenarioConfig(route=("H1", "E1"))
    return dataclasses.replace(cfg, **kw)


# ---------------------------------------------------------------- parsing


def test_minimal_scenario_defaults(tmp_path):
    sc = load_scenario(write_json(tmp_path, {"route": {"from": "H1", "to": "E1"}}))
    cfg = sc.config
    assert cfg.controller == "mpc_cbf"
    assert (cfg.speed, cfg.turning_radius, cfg.sim_dt, cfg.control_dt) == (5.0, 15.0, 0.01, 0.1)
    assert cfg.wind_force == (0.0, 0.0) and cfg.obstacles == () and cfg.duration is None
    assert cfg.barrier == BarrierGains() and cfg.mpc == MpcConfig() and cfg.vehicle == VehicleParams()
    assert sc.route.waypoints == ("H1", "T1", "T0", "E1")


def test_typo_field_named(tmp_path):
    p = write_json(tmp_path, {"route": {"from": "H1", "to": "E1"}, "windd_force": [0, 0]})
    with pytest.raises(ValidationError, match="windd_force"):
        load_scenario(p)


def test_nested_unknown_field_has_path(tmp_path):
    p = write_json(tmp_path, {"route": {"from": "H1", "to": "E1"}, "mpc": {"horizon": 3}})
    with pytest.raises(ValidationError, match=r"scenario\.mpc.*horizon"):
        load_scenario(p)


def test_missing_route(tmp_path):
    with pytest.raises(ValidationError, match="route"):
        load_scenario(write_json(tmp_path, {"speed": 5}))


def test_obstacle_beyond_duration(tmp_path):
    p = write_json(tmp_path, {"route": {"from": "H1", "to": "E1"},
                              "obstacles": [{"id": "o", "on_trajectory_at_t": 1e4}]})
    with pytest.raises(ValidationError, match="beyond"):
        load_scenario(p)


def test_obstacle_needs_one_placement():
    with pytest.raises(ValidationError, match="obstacles\\[0\\]"):
        scenario_from_dict({"route": {"from": "H1", "to": "E1"},
                            "obstacles": [{"id": "o", "x": 1, "y": 2, "on_trajectory_at_t": 3}]})


@pytest.mark.parametrize("bad", [
    {"speed": 0}, {"speed": -1}, {"turning_radius": 0}, {"duration": -1},
    {"sim_dt": 0.2}, {"control_dt": 0.105}, {"controller": "lqr"}, {"speed": True},
])
def test_invariant_violations(bad):
    with pytest.raises(ValidationError):
        scenario_from_dict({"route": {"from": "H1", "to": "E1"}, **bad})


def test_obstacle_on_trajectory_resolves_to_reference_point():
    sc = load_scenario(bundled_scenario("crosswind_obstacles"))
    assert [o.id for o in sc.obstacles] == ["o1", "o2"]
    for o, t in zip(sc.obstacles, (14.0, 38.0)):
        assert np.allclose(o.center, sc.traj.sample(round(t / sc.traj.dt)).p, atol=1e-9)


def test_bundled_scenarios_valid():
    for name in ("nominal", "crosswind", "crosswind_obstacles"):
        sc = load_scenario(bundled_scenario(name))
        assert sc.traj.duration > 0


def test_relative_map_path(tmp_path):
    src = json.loads(open(ScenarioConfig(route=("a", "b")).map_path).read())
    (tmp_path / "maps").mkdir()
    (tmp_path / "maps" / "m.json").write_text(json.dumps(src))
    sc = load_scenario(write_json(tmp_path, {"route": {"from": "H1", "to": "E1"}, "map": "maps/m.json"}))
    assert sc.config.map_path == str(tmp_path / "maps" / "m.json")


# ---------------------------------------------------------------- simulation


def test_zero_duration_is_empty_timeout():
    trace, m = run_scenario(short(duration=0.0))
    assert len(trace) == 0
    assert m.status == "timeout" and not m.completed


def test_short_run_records_uniform_steps():
    trace, m = run_scenario(short(duration=1.0))
    assert len(trace) == 101
    assert np.allclose(np.diff(trace.t), 0.01, atol=1e-12)
    assert m.status == "timeout"
    assert np.array_equal(trace.state[0], initial_state(prepare(short()).traj))


def test_controller_blind_to_wind():
    # the state at t = 0 is the same with and without wind, so the first held input must coincide
    t_calm, _ = run_scenario(short(duration=0.09))
    t_windy, _ = run_scenario(short(duration=0.09, wind_force=(3.0, -2.0)))
    assert np.array_equal(t_calm.u[0], t_windy.u[0])
    assert not np.array_equal(t_calm.state[-1], t_windy.state[-1])


# ---------------------------------------------------------------- status and flags


def _trace(h_ref, h_o, slack, sense=(1.0,), fallback=None):
    tr = TraceLog(obstacle_ids=("o",), sense_h=sense)
    for i, (hr, ho, s) in enumerate(zip(h_ref, h_o, slack)):
        tr.append(i * 0.01, np.zeros(6), np.zeros(2), hr, 0.0, [ho], [0.0], s,
                  bool(fallback and fallback[i]), np.zeros(2))
    return tr


def test_conflict_interval_extends_until_back_in_tube():
    tr = _trace([1, -0.5, -1, -0.2, 0.3, -0.1], [0.5] * 6, [0, 1e-3, 0, 0, 0, 0])
    assert conflict_flags(tr) == [False, True, True, True, False, False]
    assert terminal_status(tr, True) == "safety_violation"


def test_slack_without_sensed_obstacle_is_not_a_conflict():
    tr = _trace([1, -0.5], [5.0, 5.0], [0, 1e-3])
    assert conflict_flags(tr) == [False, False]
    assert terminal_status(tr, True) == "safety_violation"


def test_status_priority():
    assert terminal_status(_trace([1, -0.5], [0.5, 0.5], [0, 1e-3]), True) == "completed"
    assert terminal_status(_trace([1, 1], [0.5, -1e-5], [0, 0]), True) == "safety_violation"
    assert terminal_status(_trace([1, 1], [0.5, 0.5], [0, 0], fallback=[0, 1]), True) == "fallback_engaged"
    assert terminal_status(_trace([1, 1], [0.5, 0.5], [0, 0]), False) == "timeout"
    assert terminal_status(_trace([1, -1e-7], [0.5, 0.5], [0, 0]), True) == "completed"


def test_sensing_threshold_matches_distance():
    sc = load_scenario(bundled_scenario("crosswind_obstacles"))
    g = sc.config.barrier
    sense = sensing_thresholds(sc.obstacles, g, 60.0)
    o = sc.obstacles[0]
    d_eff = g.delta + o.radius
    assert sense[0] == pytest.approx(0.5 * (60.0**2 - d_eff**2))


# ---------------------------------------------------------------- files


def test_empty_trace_header_only(tmp_path):
    tr = TraceLog(obstacle_ids=("a", "b"))
    csv_path, meta = write_trace(tr, compute_metrics(tr, 0.01), tmp_path / "x.csv")
    assert open(csv_path).read() == ",".join([*CSV_BASE, "h_o_a", "h_o_b", "slack", "fallback"]) + "\n"
    assert json.load(open(meta))["status"] == "timeout"


def test_round_trip_metrics(tmp_path):
    cfg = dataclasses.replace(load_scenario(bundled_scenario("crosswind_obstacles")).config, duration=1.5)
    sc = prepare(cfg)
    trace, m = run_scenario(sc)
    csv_path, meta = write_trace(trace, m, tmp_path / "run.csv")
    back = read_trace(csv_path, ref=sc.traj, completed=trace.completed, sense_h=trace.sense_h)
    m2 = compute_metrics(back, cfg.sim_dt)
    assert m2 == m
    assert min(back.h_ref) == m.min_h_ref
    stored = json.load(open(meta))
    assert stored["min_h_ref"] == m.min_h_ref
    assert stored["min_h_o"] == m.min_h_o


def test_byte_identical_runs(tmp_path):
    cfg = short(duration=1.0)
    paths = []
    for i in range(2):
        trace, m = run_scenario(cfg)
        paths.append(write_trace(trace, m, tmp_path / f"r{i}.csv")[0])
    assert open(paths[0], "rb").read() == open(paths[1], "rb").read()


def test_write_error_names_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    tr = TraceLog(obstacle_ids=())
    with pytest.raises(OSError, match="file"):
        write_trace(tr, compute_metrics(tr, 0.01), blocker / "sub" / "x.csv")


def test_compare_without_obstacles_has_no_obstacle_columns(tmp_path):
    report = compare_controllers(short(duration=0.5), tmp_path)
    assert set(report.metrics) == {"mpc_cbf", "pid_cbf"} and not report.errors
    for name in ("mpc_cbf", "pid_cbf"):
        header = open(tmp_path / f"{name}.csv").readline().strip().split(",")
        assert not any(h.startswith("h_o_") for h in header)
    assert report.verdict in ("mpc_cbf tracks better", "pid_cbf tracks at least as well")


def test_compare_reports_partial_results():
    report = compare_controllers(short(duration=0.2), controllers=("mpc_cbf",))
    assert report.verdict == "incomplete" and "mpc_cbf" in report.metrics
    assert math.isfinite(report.metrics["mpc_cbf"].mean_error)
