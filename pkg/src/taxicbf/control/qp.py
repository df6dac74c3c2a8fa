"""Small dense convex QP solver (primal active set).

Solves::

    minimize    0.5 z'Hz + f'z
    subject to  A z >= b,  lb <= z <= ub

Bounds are turned into ordinary inequality rows and every row is scaled to
unit norm. A feasible starting point comes from an elastic phase-1 problem,
which is itself solved by the same active-set iteration; a strictly positive
elastic variable at its optimum certifies infeasibility.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from taxicbf.errors import QpInfeasibleError, QpSolverError, ValidationError

FEAS_TOL = 1e-10
PHASE1_REG = 1e-10


@dataclass
class QpProblem:
    H: np.ndarray
    f: np.ndarray
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        n = self.H.shape[0]
        self.f = np.asarray(self.f, dtype=float).reshape(n)
        if self.H.shape != (n, n):
            raise ValidationError("H must be square")
        if not np.allclose(self.H, self.H.T, atol=1e-12 * (1.0 + np.abs(self.H).max())):
            raise ValidationError("H must be symmetric")
        if self.A is None:
            self.A = np.zeros((0, n))
            self.b = np.zeros(0)
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).reshape(self.A.shape[0])
        self.lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float).reshape(n)
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).reshape(n)
        if np.any(self.lb > self.ub):
            raise QpInfeasibleError("lower bound exceeds upper bound",
                                    [("bound", int(i)) for i in np.flatnonzero(self.lb > self.ub)])

    @property
    def n(self) -> int:
        return self.H.shape[0]

    def check_convex(self, tol: float = 1e-9) -> None:
        if np.linalg.eigvalsh(self.H).min() < tol:
            raise ValidationError("H is not positive definite")

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.H @ z + self.f @ z)

    def all_rows(self):
        """Stack general rows and finite bounds as ``G z >= g``; also return row labels."""
        n = self.n
        rows = [self.A]
        rhs = [self.b]
        labels = [("row", i) for i in range(self.A.shape[0])]
        eye = np.eye(n)
        lo = np.flatnonzero(np.isfinite(self.lb))
        hi = np.flatnonzero(np.isfinite(self.ub))
        rows += [eye[lo], -eye[hi]]
        rhs += [self.lb[lo], -self.ub[hi]]
        labels += [("lb", int(i)) for i in lo] + [("ub", int(i)) for i in hi]
        return np.vstack(rows), np.concatenate(rhs), labels


@dataclass
class QpResult:
    z: np.ndarray
    objective: float
    multipliers: np.ndarray  # per row of ``QpProblem.all_rows``
    active: list
    iterations: int
    kkt_residual: float
    labels: list = field(repr=False, default_factory=list)


def _eqp_kkt(H, grad, Aw):
    """Step and multipliers of the equality-constrained subproblem from the full KKT system."""
    n = H.shape[0]
    k = Aw.shape[0]
    if k == 0:
        return np.linalg.solve(H, -grad), np.zeros(0)
    kkt = np.zeros((n + k, n + k))
    kkt[:n, :n] = H
    kkt[:n, n:] = -Aw.T
    kkt[n:, :n] = Aw
    rhs = np.concatenate([-grad, np.zeros(k)])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    return sol[:n], sol[n:]


def _eqp_schur(Hinv, grad, Aw):
    """Same subproblem through the Schur complement ``Aw H^-1 Aw'``.

    H is inverted once per solve instead of factorizing the KKT matrix at
    every iteration.
    """
    g_h = Hinv @ grad
    if Aw.shape[0] == 0:
        return -g_h, np.zeros(0)
    HA = Hinv @ Aw.T
    S = Aw @ HA
    r = Aw @ g_h
    try:
        lam = np.linalg.solve(S, r)
    except np.linalg.LinAlgError:
        lam = np.linalg.lstsq(S, r, rcond=None)[0]
    return HA @ lam - g_h, lam


def _active_set(H, f, G, g, z, working, max_iter, schur=True):
    """Primal active-set iterations from a feasible ``z``.

    Returns ``(z, working, lam_working, iterations)``.
    """
    working = list(working)
    if schur:
        Hinv = np.linalg.inv(H)
        Hinv = 0.5 * (Hinv + Hinv.T)
        eqp = lambda grad, Aw: _eqp_schur(Hinv, grad, Aw)  # noqa: E731
    else:
        eqp = lambda grad, Aw: _eqp_kkt(H, grad, Aw)  # noqa: E731
    it = 0
    at_subproblem_min = False
    # past this point switch to smallest-index choices to break cycling
    bland_after = 5 * (G.shape[0] + H.shape[0])
    while it < max_iter:
        it += 1
        grad = H @ z + f
        Aw = G[working]
        p, lam = eqp(grad, Aw)
        if at_subproblem_min:
            # z already minimizes over the working set; only multipliers are needed
            p = np.zeros_like(z)
        scale = 1.0 + np.abs(z).max()
        if at_subproblem_min or np.abs(p).max() <= 1e-12 * scale:
            if not working or lam.min() >= -1e-12 * (1.0 + np.abs(lam).max()):
                return z, working, lam, it
            if it > bland_after:
                neg = [i for i, l in enumerate(lam) if l < 0.0]
                working.pop(min(neg, key=lambda i: working[i]))
            else:
                working.pop(int(np.argmin(lam)))
            at_subproblem_min = False
            continue
        Gp = G @ p
        slack = G @ z - g
        alpha = 1.0
        block = -1
        in_w = np.zeros(G.shape[0], dtype=bool)
        in_w[working] = True
        cand = np.flatnonzero((Gp < -1e-14) & ~in_w)
        if cand.size:
            ratios = np.maximum(slack[cand], 0.0) / -Gp[cand]
            j = int(np.argmin(ratios))
            if it > bland_after:
                j = int(np.flatnonzero(ratios <= ratios[j] * (1.0 + 1e-12))[0])
            if ratios[j] < 1.0:
                alpha = float(ratios[j])
                block = int(cand[j])
        z = z + alpha * p
        if block >= 0:
            working.append(block)
        else:
            at_subproblem_min = True
    raise QpSolverError(f"active-set iteration limit ({max_iter}) reached")


def solve_qp(qp: QpProblem, z0=None, max_iter: int | None = None) -> QpResult:
    """Return the unique minimizer of a strictly convex QP.

    ``z0`` is an optional warm start; it is used directly when feasible and
    otherwise seeds the phase-1 problem. Raises :class:`QpInfeasibleError`
    listing the rows that jointly conflict when no feasible point exists.
    """
    n = qp.n
    G_raw, g_raw, labels = qp.all_rows()
    norms = np.linalg.norm(G_raw, axis=1)
    zero = norms == 0.0
    if np.any(zero & (g_raw > FEAS_TOL)):
        bad = [labels[i] for i in np.flatnonzero(zero & (g_raw > FEAS_TOL))]
        raise QpInfeasibleError("constraint row with zero coefficients and positive right-hand side", bad)
    keep = ~zero
    G = G_raw[keep] / norms[keep, None]
    g = g_raw[keep] / norms[keep]
    kept = np.flatnonzero(keep)
    m = G.shape[0]
    if max_iter is None:
        max_iter = 50 * (n + m) + 100

    z = np.zeros(n) if z0 is None else np.asarray(z0, dtype=float).copy()
    z = np.clip(z, qp.lb, qp.ub)
    viol = g - G @ z if m else np.zeros(0)
    total_iter = 0
    if m and viol.max() > FEAS_TOL:
        # elastic phase 1 over (z, t): min t + tiny regularization, G z + t >= g, t >= 0
        G1 = np.zeros((m + 1, n + 1))
        G1[:m, :n] = G
        G1[:m, n] = 1.0
        G1[m, n] = 1.0
        g1 = np.concatenate([g, [0.0]])
        H1 = np.diag(np.concatenate([np.full(n, PHASE1_REG), [PHASE1_REG]]))
        f1 = np.concatenate([-PHASE1_REG * z, [1.0]])
        zt = np.concatenate([z, [viol.max()]])
        # the tiny phase-1 Hessian would make H^-1 huge, so use the full KKT system
        zt, w1, lam1, it1 = _active_set(H1, f1, G1, g1, zt, [], max_iter, schur=False)
        total_iter += it1
        t = zt[n]
        if t > 1e-7 * (1.0 + np.abs(g).max()):
            conflict = sorted({labels[kept[w]] for w, l in zip(w1, lam1) if w < m and l > 1e-12})
            raise QpInfeasibleError(f"constraints are infeasible (elastic violation {t:.3e})", conflict)
        z = zt[:n]
        # absorb the residual elastic violation left by the regularization
        g = np.minimum(g, G @ z)
    # start from the simple bounds the (feasible) point already sits on
    working = []
    on_bound = set()
    for i in np.flatnonzero(np.abs(G @ z - g) <= 1e-12):
        kind, var = labels[kept[i]]
        if kind != "row" and var not in on_bound:
            on_bound.add(var)
            working.append(int(i))
    z, working, lam_w, it2 = _active_set(qp.H, qp.f, G, g, z, working, max_iter)
    total_iter += it2

    lam_scaled = np.zeros(m)
    lam_scaled[working] = lam_w
    lam = np.zeros(G_raw.shape[0])
    lam[kept] = lam_scaled / norms[keep]
    stationarity = qp.H @ z + qp.f - G_raw.T @ lam
    primal = np.maximum(g_raw - G_raw @ z, 0.0)
    comp = np.abs(lam * (G_raw @ z - g_raw))
    kkt = float(max(np.abs(stationarity).max(initial=0.0), primal.max(initial=0.0), comp.max(initial=0.0),
                    np.maximum(-lam, 0.0).max(initial=0.0)))
    active = [labels[kept[w]] for w in working]
    return QpResult(z=z, objective=qp.objective(z), multipliers=lam, active=active,
                    iterations=total_iter, kkt_residual=kkt, labels=labels)
