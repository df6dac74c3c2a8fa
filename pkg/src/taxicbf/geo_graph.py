"""Airport maps, local projection, and turn-feasible taxi routing.

The undirected taxiway graph is expanded into a line graph whose vertices are
directed edge traversals ``(i, j)``. A transition ``(i, j) -> (j, k)`` exists
only when ``k != i`` and the heading change at ``j`` does not exceed
``max_turn_deg``; Dijkstra over that graph yields the shortest route an
aircraft can physically follow.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from taxicbf.errors import OutOfRangeError, UnreachableError, ValidationError

EARTH_RADIUS_M = 6_371_000.0
NODE_KINDS = ("hangar", "intersection", "runway_entry")
DEFAULT_MAX_TURN_DEG = 120.0


@dataclass(frozen=True)
class MapNode:
    id: str
    lat: float
    lon: float
    kind: str = "intersection"


@dataclass(frozen=True)
class AirportMap:
    """Geodetic airport description as read from a map file."""

    origin: tuple[float, float]
    nodes: tuple[MapNode, ...]
    edges: tuple[tuple[str, str], ...]

    def __post_init__(self):
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ValidationError(f"duplicate node ids: {dup}")
        for n in self.nodes:
            if n.kind not in NODE_KINDS:
                raise ValidationError(f"node {n.id!r}: unknown kind {n.kind!r}")
        _check_edges(set(ids), self.edges)

    @classmethod
    def from_dict(cls, data: Mapping) -> "AirportMap":
        _reject_unknown(data, {"origin", "nodes", "edges"}, "map")
        for key in ("origin", "nodes", "edges"):
            if key not in data:
                raise ValidationError(f"map: missing required field {key!r}")
        origin = data["origin"]
        _reject_unknown(origin, {"lat", "lon"}, "map.origin")
        nodes = []
        for idx, raw in enumerate(data["nodes"]):
            where = f"map.nodes[{idx}]"
            _reject_unknown(raw, {"id", "lat", "lon", "kind"}, where)
            try:
                nodes.append(
                    MapNode(
                        id=str(raw["id"]),
                        lat=float(raw["lat"]),
                        lon=float(raw["lon"]),
                        kind=raw.get("kind", "intersection"),
                    )
                )
            except KeyError as exc:
                raise ValidationError(f"{where}: missing required field {exc.args[0]!r}") from None
        edges = []
        for idx, pair in enumerate(data["edges"]):
            if len(pair) != 2:
                raise ValidationError(f"map.edges[{idx}]: expected a pair of node ids")
            edges.append((str(pair[0]), str(pair[1])))
        try:
            lat0, lon0 = float(origin["lat"]), float(origin["lon"])
        except KeyError as exc:
            raise ValidationError(f"map.origin: missing required field {exc.args[0]!r}") from None
        return cls(origin=(lat0, lon0), nodes=tuple(nodes), edges=tuple(edges))


def load_airport_map(path) -> AirportMap:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return AirportMap.from_dict(data)


def _reject_unknown(obj: Mapping, allowed: set, where: str) -> None:
    if not isinstance(obj, Mapping):
        raise ValidationError(f"{where}: expected an object")
    extra = sorted(set(obj) - allowed)
    if extra:
        raise ValidationError(f"{where}: unknown field(s) {extra}")


def _check_edges(ids: set, edges: Iterable[tuple[str, str]]) -> None:
    seen = set()
    for a, b in edges:
        if a == b:
            raise ValidationError(f"self-loop edge ({a!r}, {b!r})")
        for n in (a, b):
            if n not in ids:
                raise ValidationError(f"edge ({a!r}, {b!r}) references unknown node {n!r}")
        key = frozenset((a, b))
        if key in seen:
            raise ValidationError(f"duplicate edge ({a!r}, {b!r})")
        seen.add(key)


def project_latlon(origin: Sequence[float], point: Sequence[float]) -> np.ndarray:
    """Equirectangular projection of ``point`` about ``origin``.

    Both arguments are ``(lat, lon)`` in degrees. Returns ``(x, y)`` in meters
    with x pointing east and y north.
    """
    lat0, lon0 = float(origin[0]), float(origin[1])
    lat, lon = float(point[0]), float(point[1])
    for la, lo in ((lat0, lon0), (lat, lon)):
        if not (abs(la) <= 90.0 and abs(lo) <= 180.0):
            raise OutOfRangeError(f"invalid coordinate ({la}, {lo})")
    dlat = lat - lat0
    dlon = (lon - lon0 + 180.0) % 360.0 - 180.0
    if abs(dlat) > 1.0 or abs(dlon) > 1.0:
        raise OutOfRangeError(
            f"point ({lat}, {lon}) is more than 1 degree from origin ({lat0}, {lon0})"
        )
    x = EARTH_RADIUS_M * math.radians(dlon) * math.cos(math.radians(lat0))
    y = EARTH_RADIUS_M * math.radians(dlat)
    return np.array([x, y])


def unproject_xy(origin: Sequence[float], xy: Sequence[float]) -> tuple[float, float]:
    """Inverse of :func:`project_latlon`."""
    lat0, lon0 = float(origin[0]), float(origin[1])
    lat = lat0 + math.degrees(xy[1] / EARTH_RADIUS_M)
    lon = lon0 + math.degrees(xy[0] / (EARTH_RADIUS_M * math.cos(math.radians(lat0))))
    return lat, lon


@dataclass(frozen=True)
class PlanarNode:
    id: str
    xy: tuple[float, float]
    kind: str = "intersection"

    def __post_init__(self):
        if not all(math.isfinite(c) for c in self.xy):
            raise ValidationError(f"node {self.id!r} has non-finite coordinates")


@dataclass(frozen=True)
class TaxiGraph:
    """Undirected taxiway graph with Euclidean edge weights in meters."""

    nodes: Mapping[str, PlanarNode]
    weights: Mapping[frozenset, float]
    adjacency: Mapping[str, tuple[str, ...]] = field(repr=False)

    @classmethod
    def from_planar(
        cls, positions: Mapping[str, Sequence[float]], edges: Iterable[Sequence[str]],
        kinds: Mapping[str, str] | None = None,
    ) -> "TaxiGraph":
        kinds = kinds or {}
        nodes = {
            nid: PlanarNode(nid, (float(xy[0]), float(xy[1])), kinds.get(nid, "intersection"))
            for nid, xy in positions.items()
        }
        edges = [(str(a), str(b)) for a, b in edges]
        _check_edges(set(nodes), edges)
        weights = {}
        adj: dict[str, list[str]] = {nid: [] for nid in nodes}
        for a, b in edges:
            w = math.dist(nodes[a].xy, nodes[b].xy)
            if not w > 0.0:
                raise ValidationError(f"edge ({a!r}, {b!r}) has zero length")
            weights[frozenset((a, b))] = w
            adj[a].append(b)
            adj[b].append(a)
        adjacency = {nid: tuple(sorted(nb)) for nid, nb in adj.items()}
        return cls(nodes=nodes, weights=weights, adjacency=adjacency)

    def weight(self, a: str, b: str) -> float:
        return self.weights[frozenset((a, b))]

    def xy(self, nid: str) -> np.ndarray:
        return np.array(self.nodes[nid].xy)

    def is_connected(self) -> bool:
        if not self.nodes:
            return True
        start = min(self.nodes)
        seen = {start}
        stack = [start]
        while stack:
            for nb in self.adjacency[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return len(seen) == len(self.nodes)


def build_undirected(airport: AirportMap) -> TaxiGraph:
    """Project every node about the map origin and weight edges by length."""
    positions = {n.id: project_latlon(airport.origin, (n.lat, n.lon)) for n in airport.nodes}
    kinds = {n.id: n.kind for n in airport.nodes}
    return TaxiGraph.from_planar(positions, airport.edges, kinds)


def turn_angle_deg(a, b, c) -> float:
    """Heading change in degrees when driving a -> b -> c (0 means straight on)."""
    d1 = np.asarray(b, float) - np.asarray(a, float)
    d2 = np.asarray(c, float) - np.asarray(b, float)
    cross = d1[0] * d2[1] - d1[1] * d2[0]
    dot = float(d1 @ d2)
    return math.degrees(abs(math.atan2(cross, dot)))


@dataclass(frozen=True)
class DirectedTaxiGraph:
    """Line-graph expansion: states are directed edges, arcs are allowed turns."""

    graph: TaxiGraph
    states: tuple[tuple[str, str], ...]
    arcs: Mapping[tuple[str, str], tuple[tuple[tuple[str, str], float], ...]]
    max_turn_deg: float

    def successors(self, state: tuple[str, str]):
        return self.arcs.get(state, ())

    def transition_allowed(self, i: str, j: str, k: str) -> bool:
        return any(s == (j, k) for s, _ in self.arcs.get((i, j), ()))


def expand_directed(g: TaxiGraph, max_turn_deg: float = DEFAULT_MAX_TURN_DEG) -> DirectedTaxiGraph:
    if not 0.0 < max_turn_deg < 180.0:
        raise ValidationError(f"max_turn_deg must lie in (0, 180), got {max_turn_deg}")
    if not g.is_connected():
        raise ValidationError("taxiway graph is not connected")
    states = []
    for i in sorted(g.adjacency):
        for j in g.adjacency[i]:
            states.append((i, j))
    arcs = {}
    for i, j in states:
        out = []
        for k in g.adjacency[j]:
            if k == i:
                continue
            if turn_angle_deg(g.xy(i), g.xy(j), g.xy(k)) <= max_turn_deg:
                out.append(((j, k), g.weight(j, k)))
        arcs[(i, j)] = tuple(out)
    return DirectedTaxiGraph(graph=g, states=tuple(states), arcs=arcs, max_turn_deg=float(max_turn_deg))


@dataclass(frozen=True)
class TaxiRoute:
    waypoints: tuple[str, ...]
    points: np.ndarray
    total_length: float

    def __len__(self):
        return len(self.waypoints)


def shortest_taxi_path(dg: DirectedTaxiGraph, src: str, dst: str) -> TaxiRoute:
    """Dijkstra over movement states.

    Any edge leaving ``src`` may start the route and any edge entering ``dst``
    ends it. Equal-cost routes are ranked by their node-id sequence.
    """
    g = dg.graph
    for nid in (src, dst):
        if nid not in g.nodes:
            raise ValidationError(f"unknown node {nid!r}")
    if src == dst:
        raise ValidationError("source and destination must differ")

    best: dict[tuple[str, str], tuple[float, tuple[str, ...]]] = {}
    heap = []
    for j in g.adjacency[src]:
        key = (g.weight(src, j), (src, j))
        state = (src, j)
        if state not in best or key < best[state]:
            best[state] = key
            heapq.heappush(heap, (key[0], key[1], state))
    done = set()
    while heap:
        cost, path, state = heapq.heappop(heap)
        if state in done:
            continue
        done.add(state)
        if state[1] == dst:
            points = np.array([g.nodes[n].xy for n in path])
            return TaxiRoute(waypoints=path, points=points, total_length=cost)
        for nxt, w in dg.successors(state):
            if nxt in done:
                continue
            key = (cost + w, path + (nxt[1],))
            if nxt not in best or key < best[nxt]:
                best[nxt] = key
                heapq.heappush(heap, (key[0], key[1], nxt))
    raise UnreachableError(f"no turn-feasible route from {src!r} to {dst!r}")


def route_is_turn_feasible(dg: DirectedTaxiGraph, waypoints: Sequence[str]) -> bool:
    g = dg.graph
    for a, b in zip(waypoints, waypoints[1:]):
        if b not in g.adjacency[a]:
            return False
    return all(dg.transition_allowed(i, j, k) for i, j, k in zip(waypoints, waypoints[1:], waypoints[2:]))
