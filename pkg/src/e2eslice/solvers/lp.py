"""Linear programs: a dense two-phase simplex and a HiGHS-backed engine.

Both engines accept the same :class:`LinearProgram` and return a
:class:`SolveStatus`.  The simplex is exact-arithmetic-free but fully
deterministic (Dantzig pricing with a Bland fallback, lowest-index ties).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .status import (INFEASIBLE, ITERATION_LIMIT, OPTIMAL, UNBOUNDED, FEAS_TOL,
                     SolveStatus)


def _as_matrix(a, n):
    if a is None:
        return sp.csr_matrix((0, n))
    if sp.issparse(a):
        return sp.csr_matrix(a, dtype=float)
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        return sp.csr_matrix((0, n))
    return sp.csr_matrix(a)


@dataclass(eq=False)
class LinearProgram:
    """``min c @ x + offset`` s.t. ``A_ub x <= b_ub``, ``A_eq x = b_eq``, ``lower <= x <= upper``."""

    c: np.ndarray
    A_ub: object = None
    b_ub: np.ndarray | None = None
    A_eq: object = None
    b_eq: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    offset: float = 0.0

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        n = self.c.size
        self.A_ub = _as_matrix(self.A_ub, n)
        self.A_eq = _as_matrix(self.A_eq, n)
        self.b_ub = np.zeros(0) if self.b_ub is None else np.asarray(self.b_ub, float).reshape(-1)
        self.b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, float).reshape(-1)
        self.lower = np.zeros(n) if self.lower is None else np.asarray(self.lower, float).reshape(-1)
        self.upper = (np.full(n, np.inf) if self.upper is None
                      else np.asarray(self.upper, float).reshape(-1))
        if self.A_ub.shape != (self.b_ub.size, n) or self.A_eq.shape != (self.b_eq.size, n):
            raise ValueError("constraint matrix / rhs shape mismatch")
        if self.lower.size != n or self.upper.size != n:
            raise ValueError("bounds must have one entry per variable")
        for arr in (self.c, self.A_ub.data, self.A_eq.data, self.b_ub, self.b_eq):
            if not np.all(np.isfinite(arr)):
                raise ValueError("LP coefficients must be finite")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")

    @property
    def num_vars(self) -> int:
        return self.c.size

    def objective(self, x) -> float:
        return float(self.c @ x + self.offset)

    def max_violation(self, x) -> float:
        x = np.asarray(x, float)
        v = 0.0
        if self.b_ub.size:
            v = max(v, float(np.max(self.A_ub @ x - self.b_ub)))
        if self.b_eq.size:
            v = max(v, float(np.max(np.abs(self.A_eq @ x - self.b_eq))))
        v = max(v, float(np.max(self.lower - x, initial=0.0)))
        v = max(v, float(np.max(x - self.upper, initial=0.0)))
        return v


def solve_lp(lp: LinearProgram, tol: float = 1e-6, method: str = "highs") -> SolveStatus:
    """Solve ``lp``; ``method`` is ``"highs"`` or ``"simplex"`` (the dense engine)."""
    if method == "highs":
        return _solve_highs(lp, tol)
    if method == "simplex":
        return simplex(lp, tol)
    raise ValueError(f"unknown LP method {method!r}")


def _solve_highs(lp: LinearProgram, tol: float) -> SolveStatus:
    n = lp.num_vars
    if n == 0:
        return SolveStatus(OPTIMAL, lp.offset, np.zeros(0), 0.0, 0, dual_bound=lp.offset)
    res = linprog(
        lp.c,
        A_ub=lp.A_ub if lp.b_ub.size else None,
        b_ub=lp.b_ub if lp.b_ub.size else None,
        A_eq=lp.A_eq if lp.b_eq.size else None,
        b_eq=lp.b_eq if lp.b_eq.size else None,
        bounds=np.column_stack([lp.lower, lp.upper]),
        method="highs",
        options={"primal_feasibility_tolerance": 1e-9,
                 "dual_feasibility_tolerance": 1e-9},
    )
    if res.status == 2:
        return SolveStatus(INFEASIBLE, iterations=int(res.nit), message=res.message)
    if res.status == 3:
        return SolveStatus(UNBOUNDED, -math.inf, iterations=int(res.nit), message=res.message)
    if res.status != 0 or res.x is None:
        return SolveStatus(ITERATION_LIMIT, iterations=int(res.nit), message=res.message)
    x = np.asarray(res.x, float)
    viol = lp.max_violation(x)
    status = OPTIMAL if viol <= FEAS_TOL * (1.0 + _rhs_scale(lp)) else ITERATION_LIMIT
    return SolveStatus(status, lp.objective(x), x, viol, int(res.nit),
                       dual_bound=_highs_dual_bound(lp, res), message=res.message)


def _rhs_scale(lp):
    return float(max(np.max(np.abs(lp.b_ub), initial=0.0), np.max(np.abs(lp.b_eq), initial=0.0)))


def _highs_dual_bound(lp, res):
    d = lp.offset
    if lp.b_ub.size:
        d += float(lp.b_ub @ res.ineqlin.marginals)
    if lp.b_eq.size:
        d += float(lp.b_eq @ res.eqlin.marginals)
    lo_m = np.asarray(res.lower.marginals)
    up_m = np.asarray(res.upper.marginals)
    fin_lo = np.isfinite(lp.lower)
    fin_up = np.isfinite(lp.upper)
    d += float(lp.lower[fin_lo] @ lo_m[fin_lo]) + float(lp.upper[fin_up] @ up_m[fin_up])
    return d


# --------------------------------------------------------------------------
# Dense two-phase simplex
# --------------------------------------------------------------------------

def _standard_form(lp: LinearProgram):
    """Rewrite as ``min c' z`` s.t. ``A z = b``, ``z >= 0``, ``b >= 0``.

    Returns the standard-form data plus a map back to the original variables:
    ``x = shift + M @ z[:n_struct]``.
    """
    n = lp.num_vars
    cols = []        # each entry: (orig var, sign)
    shift = np.zeros(n)
    extra_ub_rows = []
    for v in range(n):
        lo, hi = lp.lower[v], lp.upper[v]
        if np.isfinite(lo):
            shift[v] = lo
            cols.append((v, 1.0))
            if np.isfinite(hi):
                extra_ub_rows.append((len(cols) - 1, hi - lo))
        elif np.isfinite(hi):
            shift[v] = hi
            cols.append((v, -1.0))
        else:
            cols.append((v, 1.0))
            cols.append((v, -1.0))
    ns = len(cols)
    M = np.zeros((n, ns))
    for idx, (v, s) in enumerate(cols):
        M[v, idx] = s

    A_ub = lp.A_ub.toarray() @ M if lp.b_ub.size else np.zeros((0, ns))
    b_ub = lp.b_ub - (lp.A_ub @ shift if lp.b_ub.size else 0.0)
    if extra_ub_rows:
        extra = np.zeros((len(extra_ub_rows), ns))
        for r, (col, val) in enumerate(extra_ub_rows):
            extra[r, col] = 1.0
        A_ub = np.vstack([A_ub, extra])
        b_ub = np.concatenate([b_ub, [val for _, val in extra_ub_rows]])
    A_eq = lp.A_eq.toarray() @ M if lp.b_eq.size else np.zeros((0, ns))
    b_eq = lp.b_eq - (lp.A_eq @ shift if lp.b_eq.size else 0.0)

    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    A = np.zeros((m_ub + m_eq, ns + m_ub))
    A[:m_ub, :ns] = A_ub
    A[:m_ub, ns:] = np.eye(m_ub)
    A[m_ub:, :ns] = A_eq
    b = np.concatenate([b_ub, b_eq])
    c = np.concatenate([M.T @ lp.c, np.zeros(m_ub)])
    const = float(lp.c @ shift) + lp.offset
    return A, b, c, const, M, shift, ns, m_ub


def simplex(lp: LinearProgram, tol: float = 1e-6, max_iter: int | None = None,
            degenerate_limit: int = 50) -> SolveStatus:
    """Two-phase tableau simplex.

    Pricing is Dantzig's most-negative reduced cost (lowest index on ties);
    after ``degenerate_limit`` consecutive degenerate pivots it switches to
    Bland's rule, which cannot cycle.
    """
    A, b, c, const, M, shift, ns, m_ub = _standard_form(lp)
    m, nz = A.shape
    if max_iter is None:
        max_iter = max(1000, 50 * (m + nz))
    eps = 1e-10

    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0
    # a slack column can start in the basis only if its row was not flipped
    basis = np.full(m, -1, dtype=int)
    for r in range(m_ub):
        if not neg[r]:
            basis[r] = ns + r
    need_art = np.flatnonzero(basis < 0)
    n_art = need_art.size
    T = np.zeros((m + 1, nz + n_art + 1))
    T[:m, :nz] = A
    T[:m, -1] = b
    for a_idx, r in enumerate(need_art):
        T[r, nz + a_idx] = 1.0
        basis[r] = nz + a_idx

    total_iter = 0

    def run(T, basis, ncols, cost):
        nonlocal total_iter
        T[-1, :] = 0.0
        T[-1, :ncols] = cost[:ncols]
        for r in range(m):
            if basis[r] < ncols and cost[basis[r]] != 0.0:
                T[-1] -= cost[basis[r]] * T[r]
        degenerate = 0
        scale = 1.0 + np.max(np.abs(cost[:ncols]), initial=0.0)
        while True:
            if total_iter >= max_iter:
                return ITERATION_LIMIT
            rc = T[-1, :ncols]
            if degenerate >= degenerate_limit:
                cand = np.flatnonzero(rc < -eps * scale)
                if cand.size == 0:
                    return OPTIMAL
                col = int(cand[0])
            else:
                col = int(np.argmin(rc))
                if rc[col] >= -eps * scale:
                    return OPTIMAL
            column = T[:m, col]
            pos = np.flatnonzero(column > eps)
            if pos.size == 0:
                return UNBOUNDED
            ratios = T[pos, -1] / column[pos]
            best = ratios.min()
            ties = pos[ratios <= best + eps * (1.0 + abs(best))]
            row = int(ties[np.argmin(basis[ties])])
            degenerate = degenerate + 1 if best <= eps else 0
            T[row] /= T[row, col]
            piv = T[:, col].copy()
            piv[row] = 0.0
            T -= np.outer(piv, T[row])
            basis[row] = col
            total_iter += 1

    if n_art:
        cost1 = np.zeros(nz + n_art)
        cost1[nz:] = 1.0
        st = run(T, basis, nz + n_art, cost1)
        if st == ITERATION_LIMIT:
            return SolveStatus(ITERATION_LIMIT, iterations=total_iter)
        if -T[-1, -1] > 1e-8 * (1.0 + np.max(np.abs(b), initial=0.0)):
            return SolveStatus(INFEASIBLE, iterations=total_iter)
        # drive zero-level artificials out of the basis
        for r in range(m):
            if basis[r] >= nz:
                nzcol = np.flatnonzero(np.abs(T[r, :nz]) > 1e-9)
                if nzcol.size:
                    col = int(nzcol[0])
                    T[r] /= T[r, col]
                    piv = T[:, col].copy()
                    piv[r] = 0.0
                    T -= np.outer(piv, T[r])
                    basis[r] = col
        keep = basis < nz
        T = np.vstack([T[:m][keep], T[-1:]])
        T = np.hstack([T[:, :nz], T[:, -1:]])
        basis = basis[keep]
        m = basis.size

    st = run(T, basis, nz, c)
    if st != OPTIMAL:
        return SolveStatus(st, -math.inf if st == UNBOUNDED else math.nan,
                           iterations=total_iter)
    z = np.zeros(nz)
    z[basis] = T[:m, -1]
    x = shift + M @ z[:ns]
    viol = lp.max_violation(x)
    return SolveStatus(OPTIMAL, lp.objective(x), x, viol, total_iter)
