"""MPC with barrier-function constraints, solved by sequential quadratic programming.

Each SQP iteration rolls the wind-free model forward with RK4 under the
current input guess, linearizes tracking residuals and barrier conditions
around that rollout using exact RK4 sensitivities, and solves one dense QP in
the stacked input sequence. Tracking-barrier rows and the obstacle rows of
future steps carry L1 slacks (obstacle slacks priced far higher); the
obstacle rows of the first step are hard. The first input of the converged
sequence is applied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from taxicbf.control.qp import QpProblem, solve_qp
from taxicbf.errors import QpInfeasibleError, QpSolverError, ValidationError
from taxicbf.safety import (
    DEFAULT_SENSING_RADIUS,
    BarrierGains,
    Obstacle,
    obstacle_terms,
    obstacle_values,
    sensed_obstacles,
    tracking_terms,
    tracking_values,
)
from taxicbf.trajectory import ReferenceTrajectory, ref_at, wrap_angle
from taxicbf.vehicle import ControlInput, VehicleParams, _deriv, rk4_step_with_jacobians, saturate

_NO_WIND = np.zeros(2)


@dataclass(frozen=True)
class MpcConfig:
    N: int = 15
    dt: float = 0.2
    Q_p: float = 1e3
    Q_theta: float = 1e3
    Q_v: float = 1e2
    Q_omega: float = 1e3
    R_F: float = 1e3
    R_tau: float = 1e3
    slack_weight: float = 1e6
    slack_quad: float = 1.0
    obstacle_slack_weight: float = 1e9
    sqp_iters: int = 5
    sqp_tol: float = 1e-4
    sensing_radius: float = DEFAULT_SENSING_RADIUS
    tracking_cbf: bool = True
    obstacle_cbf: bool = True
    tracking_seeds: bool = True

    def __post_init__(self):
        if self.N < 1:
            raise ValidationError("horizon N must be at least 1")
        if self.dt <= 0:
            raise ValidationError("MPC dt must be positive")
        if min(self.Q_p, self.Q_theta, self.Q_v, self.Q_omega, self.R_F, self.R_tau, self.slack_weight) < 0:
            raise ValidationError("MPC weights must be non-negative")
        if self.tracking_cbf and self.slack_weight < 10 * max(self.Q_p, self.Q_theta):
            raise ValidationError("slack_weight must dominate the tracking weights")
        if self.sqp_iters < 1:
            raise ValidationError("sqp_iters must be at least 1")


@dataclass
class MpcInfo:
    slack: float = 0.0
    fallback: bool = False
    sqp_iterations: int = 0
    qp_iterations: int = 0
    predicted: np.ndarray | None = field(default=None, repr=False)


def _rollout(x0, U, params, dt):
    N = U.shape[0]
    X = np.empty((N + 1, 6))
    X[0] = x0
    S = np.zeros((N + 1, 6, 2 * N))
    for k in range(N):
        X[k + 1], A, B = rk4_step_with_jacobians(X[k], U[k], params, dt)
        S[k + 1] = A @ S[k]
        S[k + 1][:, 2 * k:2 * k + 2] += B
    return X, S


def _build_qp(x0, U0, refs, obstacles, gains, params, cfg):
    N = cfg.N
    nu = 2 * N
    ns = N if cfg.tracking_cbf else 0
    no = len(obstacles) if N > 1 else 0
    nz = nu + ns + no
    X, S = _rollout(x0, U0, params, cfg.dt)
    u0 = U0.reshape(-1)

    # Gauss-Newton tracking cost over predicted states 1..N
    res = np.empty(6 * N)
    J = np.empty((6 * N, nu))
    qp_, qt = math.sqrt(cfg.Q_p), math.sqrt(cfg.Q_theta)
    qv, qw = math.sqrt(cfg.Q_v), math.sqrt(cfg.Q_omega)
    for k in range(1, N + 1):
        r = refs[k]
        i = 6 * (k - 1)
        res[i:i + 2] = qp_ * (X[k, 0:2] - r.p)
        res[i + 2] = qt * wrap_angle(X[k, 4] - r.theta)
        res[i + 3:i + 5] = qv * (X[k, 2:4] - r.v)
        res[i + 5] = qw * (X[k, 5] - r.speed * r.kappa)
        J[i:i + 2] = qp_ * S[k, 0:2]
        J[i + 2] = qt * S[k, 4]
        J[i + 3:i + 5] = qv * S[k, 2:4]
        J[i + 5] = qw * S[k, 5]
    Rdiag = np.tile([cfg.R_F, cfg.R_tau], N)
    H = np.zeros((nz, nz))
    H[:nu, :nu] = 2.0 * (J.T @ J + np.diag(Rdiag))
    f = np.zeros(nz)
    f[:nu] = 2.0 * J.T @ (res - J @ u0)
    if ns:
        # exact (L1) penalty keeps the slack at zero whenever the barrier can be met
        H[nu:nu + ns, nu:nu + ns] = 2.0 * cfg.slack_quad * np.eye(ns)
        f[nu:nu + ns] = cfg.slack_weight
    if no:
        H[nu + ns:, nu + ns:] = 2.0 * cfg.slack_quad * np.eye(no)
        f[nu + ns:] = cfg.obstacle_slack_weight
    H[:nu, :nu] += 1e-9 * np.eye(nu)

    rows, rhs, tags = [], [], []

    def add(terms, k, slack_col, tag):
        c_F, rhs0, dc, dr = terms
        uF = U0[k, 0]
        row = np.zeros(nz)
        # G(U) = c_F(x_k) u_F,k - rhs(x_k) linearized about U0
        row[:nu] = (uF * dc - dr) @ S[k]
        row[2 * k] += c_F
        if slack_col is not None:
            row[slack_col] = 1.0
        value = c_F * uF - rhs0
        rows.append(row)
        rhs.append(row[:nu] @ u0 - value)
        tags.append(tag)

    for k in range(N):
        if cfg.obstacle_cbf:
            for j, o in enumerate(obstacles):
                # the current-step condition is the real safety guarantee and stays hard
                col = None if k == 0 else nu + ns + j
                add(obstacle_terms(X[k], o, gains, params), k, col, ("obstacle", o.id, k))
        if cfg.tracking_cbf:
            add(tracking_terms(X[k], refs[k], gains, params), k, nu + k, ("tracking", k))

    lb = np.concatenate([np.tile(params.lower, N), np.zeros(ns + no)])
    ub = np.concatenate([np.tile(params.upper, N), np.full(ns + no, np.inf)])
    # a feasible point at U0 whenever the hard current-step rows allow it:
    # each slack takes the violation of the rows it relaxes
    z0 = np.concatenate([u0, np.zeros(ns + no)])
    lo, hi = lb[0], ub[0]
    for row, b_r in zip(rows, rhs):
        if not row[nu:].any():
            # hard rows only involve the current thrust
            if row[0] > 0:
                lo = max(lo, b_r / row[0])
            elif row[0] < 0:
                hi = min(hi, b_r / row[0])
    if lo <= hi:
        z0[0] = min(max(z0[0], lo), hi)
    for row, b_r in zip(rows, rhs):
        cols = np.flatnonzero(row[nu:]) + nu
        if cols.size:
            z0[cols[0]] = max(z0[cols[0]], b_r - row[:nu] @ z0[:nu])
    A = np.array(rows) if rows else None
    b = np.array(rhs) if rows else None
    return QpProblem(H, f, A, b, lb, ub), X, z0


def _step(x, u, params, dt):
    # wind-free RK4 without the Jacobians, heading left unwrapped
    k1 = _deriv(x, u, _NO_WIND, params)
    k2 = _deriv(x + 0.5 * dt * k1, u, _NO_WIND, params)
    k3 = _deriv(x + 0.5 * dt * k2, u, _NO_WIND, params)
    k4 = _deriv(x + dt * k3, u, _NO_WIND, params)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _merit(x0, U, refs, obstacles, gains, params, cfg):
    """Nonlinear counterpart of the QP objective, used to rank SQP candidates."""
    N = cfg.N
    X = np.empty((N + 1, 6))
    X[0] = x0
    for k in range(N):
        X[k + 1] = _step(X[k], U[k], params, cfg.dt)
    P = np.array([r.p for r in refs])
    V = np.array([r.v for r in refs])
    e = X[1:, 0:2] - P[1:]
    ev = X[1:, 2:4] - V[1:]
    eth = wrap_angle(X[1:, 4] - np.array([r.theta for r in refs[1:]]))
    ew = X[1:, 5] - np.array([r.speed * r.kappa for r in refs[1:]])
    cost = (cfg.Q_p * float(np.sum(e * e)) + cfg.Q_theta * float(eth @ eth)
            + cfg.Q_v * float(np.sum(ev * ev)) + cfg.Q_omega * float(ew @ ew))
    cost += float(np.sum(U ** 2 * np.array([cfg.R_F, cfg.R_tau])))
    uF = U[:, 0]
    if cfg.tracking_cbf:
        Acc = np.array([r.a for r in refs[:N]])
        c_F, rhs = tracking_values(X[:N], P[:N], V[:N], Acc, gains, params)
        cost += cfg.slack_weight * float(np.maximum(0.0, rhs - c_F * uF).sum())
    if cfg.obstacle_cbf:
        for o in obstacles:
            c_F, rhs = obstacle_values(X[:N], o, gains, params)
            viol = np.maximum(0.0, rhs - c_F * uF)
            cost += 1e3 * cfg.obstacle_slack_weight * float(viol[0])
            if N > 1:
                cost += cfg.obstacle_slack_weight * float(viol[1:].max())
    return cost


def _turn_and_thrust(theta0, target, params, cfg):
    """Bang-bang rotation onto ``target`` followed by full thrust for the rest of the horizon."""
    N, dt = cfg.N, cfg.dt
    delta = wrap_angle(target - theta0)
    tau_max = min(params.tau_limits[1], -params.tau_limits[0])
    n = max(1, math.ceil(math.sqrt(abs(delta) / (tau_max * dt * dt))))
    n = min(n, max(1, N // 2))
    tau = float(np.clip(delta / (n * dt) ** 2, -tau_max, tau_max))
    U = np.zeros((N, 2))
    U[:n, 1] = tau
    U[n:2 * n, 1] = -tau
    U[2 * n:, 0] = params.F_limits[1]
    return np.clip(U, params.lower, params.upper)


def _seed_sequences(x0, refs, near, obstacle_trouble, params, cfg):
    """Alternative starting sequences for the SQP.

    Braking drives u_F to zero, where the torque has no first-order effect on
    position, so a pure SQP from the shifted warm start cannot discover a
    maneuver that needs a large rotation first. Evasive seeds pass the nearest
    obstacle on the side fixed by geometry (left on an exact tie) so that
    consecutive solves do not alternate sides; the other seeds reverse thrust
    against the motion or point it at the end of the reference window.
    """
    p, v, theta = x0[0:2], x0[2:4], x0[4]
    moving = float(v @ v) > 1e-6
    course = math.atan2(v[1], v[0]) if moving else theta
    targets = []
    if obstacle_trouble and near:
        o = min(near, key=lambda ob: float(np.sum((ob.center - p) ** 2)))
        d = o.center - p
        cross = math.cos(course) * d[1] - math.sin(course) * d[0]
        side = -1.0 if cross > 1e-9 else 1.0
        targets += [course + side * 1.0, course + side * 1.6]
    if moving:
        targets.append(course + math.pi)
    to_ref = refs[-1].p - p
    if float(to_ref @ to_ref) > 1e-6:
        targets.append(math.atan2(to_ref[1], to_ref[0]))
    return [_turn_and_thrust(theta, tg, params, cfg) for tg in targets]


def _sqp(x0, U, refs, near, gains, params, cfg):
    """SQP iterations with a backtracking line search on the exact-penalty merit."""
    N = cfg.N
    z = None
    X = None
    iters = qp_iters = 0
    merit = _merit(x0, U, refs, near, gains, params, cfg)
    for it in range(cfg.sqp_iters):
        qp, X, z0 = _build_qp(x0, U, refs, near, gains, params, cfg)
        try:
            sol = solve_qp(qp, z0=z0)
        except (QpInfeasibleError, QpSolverError):
            break
        iters = it + 1
        qp_iters += sol.iterations
        step = sol.z[:2 * N].reshape(N, 2) - U
        alpha = 1.0
        while True:
            trial = U + alpha * step
            m = _merit(x0, trial, refs, near, gains, params, cfg)
            if m <= merit or alpha < 0.1:
                break
            alpha *= 0.5
        if m > merit and z is not None:
            break
        z = sol.z
        U, merit = trial, m
        if alpha * float(np.abs(step).max()) < cfg.sqp_tol:
            break
    return U, z, merit, iters, qp_iters


def _current_step_interval(x0, near, gains, params):
    """Thrust interval on which every obstacle condition holds at the current state."""
    lo, hi = params.F_limits
    for o in near:
        c_F, rhs, _, _ = obstacle_terms(x0, o, gains, params)
        if abs(c_F) < 1e-12:
            if rhs > 1e-9:
                return None
        elif c_F > 0:
            lo = max(lo, rhs / c_F)
        else:
            hi = min(hi, rhs / c_F)
    return (lo, hi) if lo <= hi + 1e-12 else None


def mpc_cbf_step(
    x,
    traj: ReferenceTrajectory,
    t: float,
    obstacles: Sequence[Obstacle],
    gains: BarrierGains,
    params: VehicleParams,
    cfg: MpcConfig = MpcConfig(),
    warm_start: np.ndarray | None = None,
):
    """One receding-horizon solve.

    Returns ``(ControlInput, U, MpcInfo)`` where ``U`` is the optimized
    ``(N, 2)`` input sequence (``None`` after a fallback) for warm starting.
    """
    x0 = np.asarray(getattr(x, "array", x), dtype=float)
    if not np.all(np.isfinite(x0)):
        raise ValidationError("non-finite vehicle state")
    N = cfg.N
    refs = [ref_at(traj, t + k * cfg.dt) for k in range(N + 1)]
    near = sensed_obstacles(x0, obstacles, cfg.sensing_radius) if cfg.obstacle_cbf else []
    if warm_start is None:
        U = np.tile(np.clip([params.f0 * math.hypot(x0[2], x0[3]), 0.0], params.lower, params.upper), (N, 1))
    else:
        U = np.clip(np.asarray(warm_start, dtype=float).reshape(N, 2), params.lower, params.upper)
    info = MpcInfo()
    U, z, merit, info.sqp_iterations, info.qp_iterations = _sqp(x0, U, refs, near, gains, params, cfg)
    ns = N if cfg.tracking_cbf else 0
    obstacle_trouble = bool(near) and (z is None or z[2 * N + ns:].max() > 1e-6)
    tracking_trouble = cfg.tracking_seeds and ns > 0 and (z is None or z[2 * N:2 * N + ns].max() > 1e-6)
    if obstacle_trouble or tracking_trouble:
        # the barrier conditions could not be met along the current plan
        for U0 in _seed_sequences(x0, refs, near, obstacle_trouble, params, cfg):
            Uc, zc, mc, si, qi = _sqp(x0, U0, refs, near, gains, params, cfg)
            info.qp_iterations += qi
            # a margin keeps the plan from hopping between near-equal candidates
            if zc is not None and (z is None or mc < 0.9 * merit):
                U, z, merit, info.sqp_iterations = Uc, zc, mc, si
    interval = _current_step_interval(x0, near, gains, params)
    if z is None or interval is None:
        info.fallback = True
        return ControlInput(params.F_limits[0], 0.0), None, info
    # the line search may stop short of the QP point; the current-step
    # obstacle conditions are exact in u_F and are enforced here
    U = U.copy()
    U[0, 0] = min(max(U[0, 0], interval[0]), interval[1])
    if cfg.tracking_cbf:
        c_F, rhs, _, _ = tracking_terms(x0, refs[0], gains, params)
        info.slack = max(0.0, float(rhs - c_F * U[0, 0]))
    info.predicted = _rollout(x0, U, params, cfg.dt)[0]
    return saturate(U[0], params), U, info


def shift_warm_start(U: np.ndarray | None) -> np.ndarray | None:
    if U is None:
        return None
    return np.vstack([U[1:], U[-1:]])


class MpcCbfController:
    """Stateful wrapper that keeps the shifted warm start between calls."""

    def __init__(self, traj, obstacles, gains, params, cfg: MpcConfig = MpcConfig()):
        self.traj = traj
        self.obstacles = list(obstacles)
        self.gains = gains
        self.params = params
        self.cfg = cfg
        self._warm = None

    def reset(self):
        self._warm = None

    def __call__(self, x, t):
        u, U, info = mpc_cbf_step(x, self.traj, t, self.obstacles, self.gains, self.params,
                                  self.cfg, warm_start=self._warm)
        self._warm = shift_warm_start(U)
        return u, info
