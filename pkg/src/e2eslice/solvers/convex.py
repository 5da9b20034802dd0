"""Log-barrier interior-point method for smooth convex programs.

Problem form::

    min f(z)  s.t.  A_ub z <= b_ub,  A_eq z = b_eq,  lower <= z <= upper,
                    g_c(z) >= 0  (each g_c concave)

A phase-I problem (minimize a common slack) produces a strictly feasible
start when none is supplied, and certifies infeasibility when the slack
cannot be driven below zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.optimize import nnls

from ..errors import NonConvexityError
from .status import INFEASIBLE, ITERATION_LIMIT, OPTIMAL, FEAS_TOL, MAX_ITER, SolveStatus

DENSE_LIMIT = 4_000_000  # entries; larger constraint matrices stay sparse
PHASE_ONE_RADIUS = 1e6  # relative box for unbounded variables during phase I


@dataclass(eq=False)
class ConcaveConstraints:
    """Vector of concave functions ``g(z) >= 0``.

    ``fun(z)`` -> (m,), ``jac(z)`` -> (m, n) dense or sparse,
    ``hess(z, w)`` -> (n, n) matrix ``sum_c w_c * hess g_c(z)`` (negative semidefinite).
    """

    fun: Callable
    jac: Callable
    hess: Callable
    size: int


@dataclass(eq=False)
class ConvexProgram:
    """``objective(z)`` returns ``(value, gradient, hessian)``; hessian may be a 1-D diagonal."""

    n: int
    objective: Callable
    A_ub: object = None
    b_ub: np.ndarray | None = None
    A_eq: object = None
    b_eq: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    concave: ConcaveConstraints | None = None
    x0: np.ndarray | None = None

    def __post_init__(self):
        n = self.n
        self.A_ub = _csr(self.A_ub, n)
        self.A_eq = _csr(self.A_eq, n)
        self.b_ub = np.zeros(0) if self.b_ub is None else np.asarray(self.b_ub, float).reshape(-1)
        self.b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, float).reshape(-1)
        self.lower = np.full(n, -np.inf) if self.lower is None else np.asarray(self.lower, float)
        self.upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, float)
        if self.A_ub.shape[0] != self.b_ub.size or self.A_eq.shape[0] != self.b_eq.size:
            raise ValueError("constraint matrix / rhs shape mismatch")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")

    def linear_rows(self):
        """All linear inequalities (including finite bounds) as ``G z <= h``."""
        n = self.n
        blocks, rhs = [self.A_ub], [self.b_ub]
        lo = np.flatnonzero(np.isfinite(self.lower))
        hi = np.flatnonzero(np.isfinite(self.upper))
        if lo.size:
            blocks.append(sp.csr_matrix((-np.ones(lo.size), (np.arange(lo.size), lo)),
                                        shape=(lo.size, n)))
            rhs.append(-self.lower[lo])
        if hi.size:
            blocks.append(sp.csr_matrix((np.ones(hi.size), (np.arange(hi.size), hi)),
                                        shape=(hi.size, n)))
            rhs.append(self.upper[hi])
        return sp.vstack(blocks, format="csr"), np.concatenate(rhs)

    def max_violation(self, z) -> float:
        G, h = self.linear_rows()
        v = float(np.max(G @ z - h, initial=0.0))
        if self.b_eq.size:
            v = max(v, float(np.max(np.abs(self.A_eq @ z - self.b_eq))))
        if self.concave is not None and self.concave.size:
            v = max(v, float(np.max(-self.concave.fun(z), initial=0.0)))
        return v


def _csr(a, n):
    if a is None:
        return sp.csr_matrix((0, n))
    if sp.issparse(a):
        return sp.csr_matrix(a, dtype=float)
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return sp.csr_matrix((0, n))
    return sp.csr_matrix(np.atleast_2d(a))


def _dense(m):
    return m.toarray() if sp.issparse(m) else np.asarray(m, float)


def check_concavity(cp: ConvexProgram, samples: int = 20, seed: int = 0,
                    tol: float = 1e-9) -> bool:
    """Midpoint spot-check of concavity of ``cp.concave`` inside the finite box."""
    if cp.concave is None or cp.concave.size == 0:
        return True
    rng = np.random.default_rng(seed)
    lo = np.where(np.isfinite(cp.lower), cp.lower, -1.0)
    hi = np.where(np.isfinite(cp.upper), cp.upper, lo + 2.0)
    for _ in range(samples):
        a = lo + (hi - lo) * rng.random(cp.n)
        b = lo + (hi - lo) * rng.random(cp.n)
        gm = cp.concave.fun(0.5 * (a + b))
        avg = 0.5 * (cp.concave.fun(a) + cp.concave.fun(b))
        if np.any(gm < avg - tol * (1.0 + np.abs(avg))):
            return False
    return True


class _Barrier:
    """Barrier machinery for one (phase-I or phase-II) problem."""

    def __init__(self, objective, G, h, A_eq, b_eq, concave):
        self.objective = objective
        # dense algebra is much faster than sparse bookkeeping at these sizes
        if sp.issparse(G) and G.shape[0] * G.shape[1] <= DENSE_LIMIT:
            G = G.toarray()
        self.G = G
        self.h = h
        self.A_eq = A_eq
        self.b_eq = b_eq
        self.concave = concave
        self.m = G.shape[0] + (concave.size if concave is not None else 0)
        self.newton_steps = 0
        self.merit_trace: list[tuple[float, float]] = []

    def slacks(self, z):
        s = self.h - self.G @ z
        g = self.concave.fun(z) if self.concave is not None else np.zeros(0)
        return s, g

    def phi(self, z, t):
        with np.errstate(invalid="ignore", divide="ignore"):
            s, g = self.slacks(z)
        # negated comparison also rejects NaN (oracle evaluated off its domain)
        if not (np.all(s > 0) and np.all(g > 0)):
            return math.inf
        f = self.objective(z)[0]
        return t * f - np.sum(np.log(s)) - np.sum(np.log(g))

    def center(self, z, t, max_iter, newton_tol=1e-11, stop_fn=None):
        n = z.size
        A = _dense(self.A_eq) if self.A_eq.shape[0] else None
        while True:
            if self.newton_steps >= max_iter:
                return z, False
            f, gf, Hf = self.objective(z)
            s, g = self.slacks(z)
            grad = t * np.asarray(gf, float)
            H = np.zeros((n, n))
            if np.ndim(Hf) == 1:
                H[np.diag_indices(n)] = t * np.asarray(Hf, float)
            elif Hf is not None:
                H += t * _dense(Hf)
            if self.G.shape[0]:
                inv_s = 1.0 / s
                grad += self.G.T @ inv_s
                if sp.issparse(self.G):
                    Gs = self.G.multiply(inv_s[:, None]).tocsr()
                    H += _dense(Gs.T @ Gs)
                else:
                    Gs = self.G * inv_s[:, None]
                    H += Gs.T @ Gs
            if self.concave is not None and self.concave.size:
                J = self.concave.jac(z)
                inv_g = 1.0 / g
                if sp.issparse(J):
                    grad -= J.T @ inv_g
                    Jg = J.multiply(inv_g[:, None]).tocsr()
                    H += _dense(Jg.T @ Jg)
                else:
                    J = np.asarray(J, float)
                    grad -= J.T @ inv_g
                    Jg = J * inv_g[:, None]
                    H += Jg.T @ Jg
                H -= _dense(self.concave.hess(z, inv_g))
            dz = self._newton_direction(H, grad, A)
            slope = float(grad @ dz)
            if slope > 1e-12 * (1.0 + np.linalg.norm(grad) * np.linalg.norm(dz)):
                raise NonConvexityError("Newton direction is not a descent direction")
            lam2 = -slope
            phi0 = t * f - np.sum(np.log(s)) - np.sum(np.log(g))
            self.merit_trace.append((t, phi0))
            if lam2 / 2.0 <= newton_tol:
                return z, True
            alpha = 1.0
            if self.G.shape[0]:
                Gdz = self.G @ dz
                pos = Gdz > 0
                if np.any(pos):
                    alpha = min(1.0, 0.99 * float(np.min(s[pos] / Gdz[pos])))
            while alpha > 1e-14:
                phi1 = self.phi(z + alpha * dz, t)
                if phi1 <= phi0 + 0.25 * alpha * slope:
                    break
                alpha *= 0.5
            else:
                # numerical floor: no further decrease representable
                return z, True
            if phi1 > phi0 + 1e-9 * (1.0 + abs(phi0)):
                raise NonConvexityError("merit function increased during centering")
            z = z + alpha * dz
            self.newton_steps += 1
            if stop_fn is not None and stop_fn(z):
                # phase I: the centering problem may be unbounded, so stop as soon as it can
                return z, True
            if phi0 - phi1 <= 1e-13 * max(1.0, abs(phi0)):
                # decrease is at round-off level; treat as centered
                return z, True

    @staticmethod
    def _newton_direction(H, grad, A):
        n = H.shape[0]
        reg = 1e-14 * max(1.0, float(np.max(np.abs(np.diag(H)), initial=1.0)))
        if A is None:
            try:
                Lc = np.linalg.cholesky(H + reg * np.eye(n))
            except np.linalg.LinAlgError as exc:
                raise NonConvexityError("barrier Hessian is not positive definite") from exc
            y = np.linalg.solve(Lc, -grad)
            return np.linalg.solve(Lc.T, y)
        p = A.shape[0]
        K = np.zeros((n + p, n + p))
        K[:n, :n] = H + reg * np.eye(n)
        K[:n, n:] = A.T
        K[n:, :n] = A
        rhs = np.concatenate([-grad, np.zeros(p)])
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        return sol[:n]


def _solve_barrier(bar: _Barrier, z, t0, mu, gap_tol_fn, max_iter, stop_fn=None):
    t = t0
    while True:
        z, ok = bar.center(z, t, max_iter, stop_fn=stop_fn)
        if not ok:
            return z, t, ITERATION_LIMIT
        if stop_fn is not None and stop_fn(z):
            return z, t, "stopped"
        if bar.m == 0 or bar.m / t <= gap_tol_fn(z):
            return z, t, OPTIMAL
        t *= mu


def solve_convex(cp: ConvexProgram, tol: float = 1e-6, feas_tol: float = FEAS_TOL,
                 max_iter: int = MAX_ITER, abs_tol: float = 1e-14,
                 mu: float = 20.0) -> SolveStatus:
    """Minimize ``cp`` to a relative duality gap of ``tol``.

    Returns status ``optimal`` (strictly feasible iterate, KKT residual
    reported), ``infeasible`` (phase I could not find an interior point; ``x``
    holds the least-violating point found) or ``iteration-limit``.
    """
    n = cp.n
    G, h = cp.linear_rows()
    norms = np.asarray(abs(G).max(axis=1).todense()).reshape(-1) if G.shape[0] else np.zeros(0)
    norms[norms == 0] = 1.0
    G = sp.diags(1.0 / norms) @ G if G.shape[0] else G
    h = h / norms
    A_eq, b_eq = cp.A_eq, cp.b_eq

    if cp.x0 is not None:
        z0 = np.asarray(cp.x0, float).copy()
    else:
        lo = np.where(np.isfinite(cp.lower), cp.lower, np.nan)
        hi = np.where(np.isfinite(cp.upper), cp.upper, np.nan)
        z0 = np.where(np.isfinite(lo) & np.isfinite(hi), 0.5 * (lo + hi),
                      np.where(np.isfinite(lo), lo + 1.0, np.where(np.isfinite(hi), hi - 1.0, 0.0)))
    if b_eq.size:
        Ad = _dense(A_eq)
        r = b_eq - Ad @ z0
        z0 = z0 + np.linalg.lstsq(Ad, r, rcond=None)[0]
        if np.max(np.abs(Ad @ z0 - b_eq)) > feas_tol * (1.0 + np.max(np.abs(b_eq))):
            return SolveStatus(INFEASIBLE, x=z0, max_violation=float(np.max(np.abs(Ad @ z0 - b_eq))),
                               message="equality constraints are inconsistent")

    def interior(z):
        s = h - G @ z
        g = cp.concave.fun(z) if cp.concave is not None and cp.concave.size else np.zeros(0)
        return np.all(s > 0) and np.all(g > 0)

    iters = 0
    if not interior(z0):
        z0, iters, sigma = _phase_one(cp, G, h, z0, max_iter)
        if z0 is None or sigma >= 0:
            return SolveStatus(INFEASIBLE, x=None if z0 is None else z0,
                               max_violation=max(sigma, 0.0) if z0 is not None else math.inf,
                               iterations=iters, message="no strictly feasible point")

    concave = cp.concave if cp.concave is not None and cp.concave.size else None
    bar = _Barrier(cp.objective, G, h, A_eq, b_eq, concave)
    bar.newton_steps = iters
    f0 = cp.objective(z0)[0]
    t0 = max(1.0, bar.m / max(abs(f0), 1e-300)) if bar.m else 1.0
    z, t, st = _solve_barrier(bar, z0, t0, mu,
                              lambda z: max(tol * abs(cp.objective(z)[0]), abs_tol),
                              max_iter)
    f, gf, _ = cp.objective(z)
    kkt = _kkt_residual(cp, G, h, concave, z, t, f, gf)
    status = OPTIMAL if st == OPTIMAL else ITERATION_LIMIT
    return SolveStatus(status, float(f), z, cp.max_violation(z), bar.newton_steps,
                       kkt_residual=kkt, info={"merit": bar.merit_trace, "t": t})


def _kkt_residual(cp, G, h, concave, z, t, f, gf):
    """Relative KKT residual with least-squares multipliers on the near-active set.

    Barrier multipliers ``1/(t s)`` identify the active set; multipliers are then
    refit by non-negative least squares, which is insensitive to round-off in
    slacks that are O(1/t).
    """
    gf = np.asarray(gf, float)
    cols, slacks, weights = [], [], []
    gap = 0.0
    if G.shape[0]:
        s = h - G @ z
        cols.append(-_dense(G).T)
        slacks.append(s)
        weights.append(1.0 / (t * s))
        gap += G.shape[0] / t
    if concave is not None:
        g = concave.fun(z)
        cols.append(_dense(concave.jac(z)).T)
        slacks.append(g)
        weights.append(1.0 / (t * g))
        gap += concave.size / t
    if cp.b_eq.size:
        Ad = _dense(cp.A_eq)
        cols += [Ad.T, -Ad.T]
        slacks += [np.zeros(Ad.shape[0])] * 2
        weights += [np.ones(Ad.shape[0])] * 2
    scale = 1.0 + float(np.max(np.abs(gf), initial=0.0))
    if not cols:
        return float(np.max(np.abs(gf), initial=0.0)) / scale
    M = np.hstack(cols)
    sl = np.concatenate(slacks)
    wt = np.concatenate(weights)
    active = wt > 1e-6 * float(np.max(wt, initial=0.0))
    lam = np.zeros(M.shape[1])
    if np.any(active):
        lam[active] = nnls(M[:, active], gf, maxiter=50 * M.shape[0] + 100)[0]
    stat = float(np.max(np.abs(M @ lam - gf), initial=0.0)) / scale
    comp = float(np.sum(lam * np.abs(sl))) / (1.0 + abs(f))
    return max(stat, comp, gap / (1.0 + abs(f)))


def _phase_one(cp: ConvexProgram, G, h, z0, max_iter):
    """Minimize a common slack ``sigma``; returns (z, newton steps, sigma).

    Only rows violated (or active) at ``z0`` are relaxed by ``sigma``; rows that
    ``z0`` satisfies strictly stay hard. Relaxing those too lets bounded
    variables drift far outside their range, where exponential constraints go
    flat and Newton progress becomes additive.
    """
    n = cp.n
    s0 = h - G @ z0
    g0 = cp.concave.fun(z0) if cp.concave is not None and cp.concave.size else np.zeros(0)
    worst = max(float(np.max(-s0, initial=0.0)), float(np.max(-g0, initial=0.0)))
    sigma0 = worst + 1.0
    lin_relax = (s0 <= 0).astype(float)
    con_relax = (g0 <= 0).astype(float)
    # rows: G z - sigma <= h (violated rows only); -sigma <= 1 ; |z_j - z0_j| <= R
    # for unbounded z_j.
    # Without the box the centering problem can be unbounded (log terms keep growing).
    free_lo = np.flatnonzero(~np.isfinite(cp.lower))
    free_hi = np.flatnonzero(~np.isfinite(cp.upper))
    R = PHASE_ONE_RADIUS * (1.0 + float(np.max(np.abs(z0), initial=0.0)))
    box = sp.vstack([
        sp.csr_matrix((-np.ones(free_lo.size), (np.arange(free_lo.size), free_lo)),
                      shape=(free_lo.size, n + 1)),
        sp.csr_matrix((np.ones(free_hi.size), (np.arange(free_hi.size), free_hi)),
                      shape=(free_hi.size, n + 1)),
    ])
    Gp = sp.vstack([
        sp.hstack([G, -sp.csr_matrix(lin_relax[:, None])]),
        sp.csr_matrix(([-1.0], ([0], [n])), shape=(1, n + 1)),
        box,
    ], format="csr")
    hp = np.concatenate([h, [1.0], R - z0[free_lo], R + z0[free_hi]])
    A_eq = sp.hstack([cp.A_eq, sp.csr_matrix((cp.A_eq.shape[0], 1))], format="csr")

    concave = None
    if cp.concave is not None and cp.concave.size:
        base = cp.concave

        def fun(w):
            return base.fun(w[:n]) + con_relax * w[n]

        def jac(w):
            J = base.jac(w[:n])
            if sp.issparse(J):
                return sp.hstack([J, sp.csr_matrix(con_relax[:, None])], format="csr")
            return np.hstack([np.asarray(J, float), con_relax[:, None]])

        def hess(w, wt):
            Hn = _dense(base.hess(w[:n], wt))
            out = np.zeros((n + 1, n + 1))
            out[:n, :n] = Hn
            return out

        concave = ConcaveConstraints(fun, jac, hess, base.size)

    def objective(w):
        grad = np.zeros(n + 1)
        grad[n] = 1.0
        return w[n], grad, np.zeros(n + 1)

    bar = _Barrier(objective, Gp, hp, A_eq, cp.b_eq, concave)
    w0 = np.concatenate([z0, [sigma0]])
    w, _, _ = _solve_barrier(bar, w0, 1.0, 20.0, lambda w: 1e-10, max_iter,
                             stop_fn=lambda w: w[n] < 0)
    return w[:n], bar.newton_steps, float(w[n])
