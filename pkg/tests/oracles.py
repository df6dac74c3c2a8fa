"""Independent reference implementations used by the tests."""

from __future__ import annotations

import math

import numpy as np

from taxicbf.geo_graph import TaxiGraph


def haversine_m(lat1, lon1, lat2, lon2, radius=6_371_000.0):
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * radius * math.asin(math.sqrt(a))


def turn_deg(a, b, c):
    """Heading change at b, from the interior angle via the law of cosines."""
    ab = math.dist(a, b)
    bc = math.dist(b, c)
    ac = math.dist(a, c)
    cos_int = (ab**2 + bc**2 - ac**2) / (2 * ab * bc)
    interior = math.degrees(math.acos(max(-1.0, min(1.0, cos_int))))
    return 180.0 - interior


def brute_force_cost(g: TaxiGraph, src, dst, max_turn_deg, max_hops=None):
    """Cheapest walk src -> dst with no reversals and every turn within limit, by enumeration."""
    max_hops = 2 * len(g.nodes) if max_hops is None else max_hops
    best = math.inf
    xy = {n: g.nodes[n].xy for n in g.nodes}

    def walk(path, cost):
        nonlocal best
        if cost >= best:
            return
        if path[-1] == dst and len(path) > 1:
            best = cost
            return
        if len(path) - 1 >= max_hops:
            return
        for k in g.adjacency[path[-1]]:
            if len(path) >= 2:
                i, j = path[-2], path[-1]
                if k == i or turn_deg(xy[i], xy[j], xy[k]) > max_turn_deg + 1e-9:
                    continue
            walk(path + [k], cost + g.weight(path[-1], k))

    walk([src], 0.0)
    return best


def random_graph(rng: np.random.Generator, n_nodes: int, extra_edges: int) -> TaxiGraph:
    """Connected planar-coordinate graph: random spanning tree plus extra edges."""
    ids = [f"n{i}" for i in range(n_nodes)]
    pts = rng.uniform(0.0, 100.0, size=(n_nodes, 2))
    edges = set()
    for i in range(1, n_nodes):
        j = int(rng.integers(0, i))
        edges.add(frozenset((ids[i], ids[j])))
    for _ in range(extra_edges):
        a, b = rng.choice(n_nodes, size=2, replace=False)
        edges.add(frozenset((ids[a], ids[b])))
    positions = {nid: pts[i] for i, nid in enumerate(ids)}
    return TaxiGraph.from_planar(positions, [tuple(sorted(e)) for e in edges])


def random_polyline(rng: np.random.Generator, q: float, n_legs: int | None = None) -> np.ndarray:
    """Waypoints with turns up to 120 degrees and legs long enough to fillet at radius q."""
    n_legs = int(rng.integers(1, 6)) if n_legs is None else n_legs
    heading = rng.uniform(-math.pi, math.pi)
    pts = [np.zeros(2)]
    max_offset = q * math.tan(math.radians(60))
    for _ in range(n_legs):
        length = rng.uniform(2 * max_offset + 1.0, 2 * max_offset + 100.0)
        pts.append(pts[-1] + length * np.array([math.cos(heading), math.sin(heading)]))
        heading += rng.uniform(-1, 1) * math.radians(120)
    return np.array(pts)


def rk4_order_estimate(step, x0, u, params, horizon=2.0, dt=0.1):
    """Self-convergence order of a fixed-step integrator against a dt/64 run."""
    def run(h):
        x = np.array(x0, dtype=float)
        for _ in range(int(round(horizon / h))):
            x = step(x, u, None, params, h)
        return x

    ref = run(dt / 64)
    e1 = np.linalg.norm(run(dt) - ref)
    e2 = np.linalg.norm(run(dt / 2) - ref)
    return math.log2(e1 / e2)


def flow_state(x, u, wind, params, t):
    """Vehicle state a signed time ``t`` along the flow (small |t|), one RK4 step."""
    from taxicbf.vehicle import _deriv

    x = np.asarray(x, dtype=float)
    k1 = _deriv(x, u, wind, params)
    k2 = _deriv(x + 0.5 * t * k1, u, wind, params)
    k3 = _deriv(x + 0.5 * t * k2, u, wind, params)
    k4 = _deriv(x + t * k3, u, wind, params)
    return x + (t / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def moving_ref(r, t):
    """Reference sample advanced by ``t`` at constant reference acceleration."""
    from taxicbf.trajectory import RefSample

    return RefSample(r.t + t, r.p + r.v * t + 0.5 * r.a * t * t, r.theta, r.v + r.a * t, r.a, r.kappa)


def close(a, b, rel):
    """Relative agreement, with unit scale floor so values near zero compare absolutely."""
    return abs(a - b) <= rel * max(abs(a), abs(b), 1.0)


def grid_min_2d(H, f, A, b, lb, ub, points=401, levels=6):
    """Minimum of a 2-variable QP over its feasible set by successively refined grids."""
    lo, hi = np.array(lb, float), np.array(ub, float)
    best_val, best_z = math.inf, None
    for _ in range(levels):
        xs = np.linspace(lo[0], hi[0], points)
        ys = np.linspace(lo[1], hi[1], points)
        X, Y = np.meshgrid(xs, ys)
        Z = np.stack([X.ravel(), Y.ravel()], axis=1)
        ok = np.all(Z @ A.T >= b - 1e-12, axis=1) if A.size else np.ones(len(Z), bool)
        if ok.any():
            vals = 0.5 * np.einsum("ij,jk,ik->i", Z, H, Z) + Z @ f
            vals[~ok] = np.inf
            i = int(np.argmin(vals))
            if vals[i] < best_val:
                best_val, best_z = float(vals[i]), Z[i].copy()
        if best_z is None:
            return math.inf, None
        step = (hi - lo) / (points - 1)
        lo = np.maximum(best_z - 8 * step, lb)
        hi = np.minimum(best_z + 8 * step, ub)
    return best_val, best_z


def random_feasible_qp(rng, n, m, box=2.0):
    """Strictly convex QP whose constraints all hold with slack at a random interior point."""
    M = rng.normal(size=(n, n))
    H = M @ M.T + 0.1 * np.eye(n)
    f = rng.normal(size=n) * 3
    z_in = rng.uniform(-0.5 * box, 0.5 * box, n)
    A = rng.normal(size=(m, n))
    b = A @ z_in - rng.uniform(0.0, 1.0, m)
    return H, f, A, b, -box * np.ones(n), box * np.ones(n)


def enumerate_min_2d(H, f, A, b, lb, ub):
    """Exact minimum of a strictly convex 2-variable QP by enumerating active sets of size <= 2."""
    rows = [np.asarray(r, float) for r in A] + [np.array([1.0, 0]), np.array([0, 1.0]),
                                                  np.array([-1.0, 0]), np.array([0, -1.0])]
    rhs = list(b) + [lb[0], lb[1], -ub[0], -ub[1]]
    G, g = np.array(rows), np.array(rhs)

    def feasible(z):
        return np.all(G @ z >= g - 1e-9)

    cands = [np.linalg.solve(H, -f)]
    for a, beta in zip(rows, rhs):
        # minimize on the line a.z = beta
        K = np.block([[H, a[:, None]], [a[None, :], np.zeros((1, 1))]])
        cands.append(np.linalg.solve(K, np.concatenate([-f, [beta]]))[:2])
    for i in range(len(rows)):
        for j in range(i + 1, len(rows)):
            M = np.array([rows[i], rows[j]])
            if abs(np.linalg.det(M)) > 1e-12:
                cands.append(np.linalg.solve(M, [rhs[i], rhs[j]]))
    vals = [0.5 * z @ H @ z + f @ z for z in cands if feasible(z)]
    return min(vals)
