"""Command line entry point: ``taxicbf {plan,trajectory,simulate,compare,validate}``.

Exit codes: 0 success, 1 validation error (bad input, unreachable route or
infeasible fillet), 2 safety violation, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from taxicbf.errors import InfeasibleFilletError, TaxiCbfError, UnreachableError, ValidationError
from taxicbf.geo_graph import DEFAULT_MAX_TURN_DEG, build_undirected, expand_directed, load_airport_map, shortest_taxi_path
from taxicbf.sim import compare_controllers, default_map_path, load_scenario, run_scenario, write_trace
from taxicbf.trajectory import DEFAULT_DT, DEFAULT_SPEED, fillet_waypoints, sample_reference

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_SAFETY = 2
EXIT_IO = 3


def _route(args):
    airport = load_airport_map(args.map)
    dg = expand_directed(build_undirected(airport), args.max_turn_deg)
    return shortest_taxi_path(dg, args.src, args.dst)


def cmd_plan(args) -> int:
    route = _route(args)
    print(" ".join(route.waypoints))
    print(f"length_m {route.total_length:.3f}")
    return EXIT_OK


def cmd_trajectory(args) -> int:
    route = _route(args)
    traj = sample_reference(fillet_waypoints(route, args.radius), args.speed, args.dt)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    traj.to_csv(out)
    print(f"{len(traj)} samples, duration {traj.duration:.3f} s -> {out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    sc = load_scenario(args.scenario)
    trace, metrics = run_scenario(sc)
    csv_path, meta_path = write_trace(trace, metrics, Path(args.out) / f"{sc.config.controller}.csv")
    print(json.dumps(metrics.to_dict(), indent=2, sort_keys=True))
    print(f"trace: {csv_path}\nmetrics: {meta_path}")
    return EXIT_SAFETY if metrics.status == "safety_violation" else EXIT_OK


def cmd_compare(args) -> int:
    sc = load_scenario(args.scenario)
    out = Path(args.out)
    report = compare_controllers(sc.config, out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "comparison.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    for name, m in report.metrics.items():
        print(f"{name:16s} status={m.status:17s} mean_error={m.mean_error:.3f} m")
    for name, msg in report.errors.items():
        print(f"{name:16s} error: {msg}")
    print(f"verdict: {report.verdict}\nreport: {path}")
    # violations are findings of the comparison, not failures of the command
    return EXIT_OK


def cmd_validate(args) -> int:
    sc = load_scenario(args.scenario)
    cfg = sc.config
    print(f"ok: route {' -> '.join(sc.route.waypoints)}, {sc.route.total_length:.1f} m, "
          f"reference {sc.traj.duration:.2f} s, controller {cfg.controller}, "
          f"{len(sc.obstacles)} obstacle(s)")
    for o in sc.obstacles:
        print(f"  {o.id}: ({o.center[0]:.3f}, {o.center[1]:.3f}) radius {o.radius}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="taxicbf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def route_args(p):
        p.add_argument("--map", default=default_map_path(), help="airport map JSON (default: bundled map)")
        p.add_argument("--from", dest="src", required=True, help="start node id")
        p.add_argument("--to", dest="dst", required=True, help="goal node id")
        p.add_argument("--max-turn-deg", type=float, default=DEFAULT_MAX_TURN_DEG)

    p = sub.add_parser("plan", help="shortest turn-feasible route")
    route_args(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("trajectory", help="sample the filleted reference to CSV")
    route_args(p)
    p.add_argument("--speed", type=float, default=DEFAULT_SPEED)
    p.add_argument("--radius", type=float, default=15.0, help="fillet turning radius, m")
    p.add_argument("--dt", type=float, default=DEFAULT_DT)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_trajectory)

    for name, func, text in (
        ("simulate", cmd_simulate, "run one scenario and write its trace"),
        ("compare", cmd_compare, "run a scenario under mpc_cbf and pid_cbf"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--scenario", required=True)
        p.add_argument("--out", required=True, help="output directory")
        p.set_defaults(func=func)

    p = sub.add_parser("validate", help="check a scenario file without running it")
    p.add_argument("--scenario", required=True)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, UnreachableError, InfeasibleFilletError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except TaxiCbfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
