"""RAN power control for a fixed server/link placement.

The subproblem minimizes ``sum_i a_i sum_k p_i^k`` where ``a_i`` is the part
of user ``i``'s delay budget left for transmission.  Rates enter through
auxiliary variables ``nu`` bounded by the threshold rate (a concave
constraint); everything else is linear.

Internally powers are scaled per sub-channel by ``p_ref = (I_th + sigma^2)/h``
and rates by the sub-channel bandwidth, so the concave constraint reads
``nu' <= log2(1 + p')`` and both variables are O(1)-O(10).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import InfeasibleBudgetError
from .model import MAX_SPECTRAL_EFFICIENCY, Placement, PowerAllocation, Scenario, core_delay
from .solvers import (INFEASIBLE, OPTIMAL, ConcaveConstraints, ConvexProgram, SolveStatus,
                      solve_convex)

LN2 = math.log(2.0)
DEFAULT_TOL = 1e-9


@dataclass(eq=False)
class PowerSubproblem:
    """Problem data for one power-control solve.

    ``pairs`` lists the free (user, sub-channel) variables; pairs silenced by
    a zero interference threshold are kept at zero power and left out.
    """

    scenario: Scenario
    placement: Placement
    r_min: np.ndarray               # bps per user
    weight_s: np.ndarray            # a_i, seconds
    core_delay_s: np.ndarray
    pairs: list[tuple[int, int]]
    p_ref: np.ndarray               # W per pair
    silenced: list[tuple[int, int]] = field(default_factory=list)
    rows: dict = field(default_factory=dict)   # family -> (A over [p', nu'], b)
    labels: dict = field(default_factory=dict)  # family -> row entity names

    @property
    def size(self) -> int:
        return len(self.pairs)

    def user_of(self) -> np.ndarray:
        return np.array([i for i, _ in self.pairs], dtype=int)


def build(scn: Scenario, pl: Placement, ran_budget_s=None) -> PowerSubproblem:
    """Assemble the power subproblem for placement ``pl``.

    ``ran_budget_s`` (scalar or per user) replaces the usual budget split:
    the transmission delay then has to fit ``ran_budget - tau`` alone, as in
    the disjoint baseline.
    """
    U = scn.num_users
    w = scn.spectrum.subchannel_bandwidth_hz
    dc = scn.datacenter
    N, L = dc.num_servers, dc.num_links
    r_min = np.zeros(U)
    weight = np.zeros(U)
    t_cn = np.zeros(U)
    override = None if ran_budget_s is None else np.broadcast_to(
        np.asarray(ran_budget_s, float), (U,))
    for u in scn.users:
        i = u.id
        t_cn[i] = core_delay(scn, pl, i)
        if override is None:
            fixed = (u.ran_constant_delay_s + u.packet_size_bits / scn.backhaul.capacity_bps
                     + t_cn[i] + u.transport_delay_s)
            remaining = u.delay_budget_s - fixed
        else:
            remaining = override[i] - u.ran_constant_delay_s
        if math.isinf(remaining) and remaining > 0:
            r_min[i], weight[i] = 0.0, 0.0
            continue
        if not remaining > 0:
            raise InfeasibleBudgetError(
                i, f"user {i}: fixed delays leave {remaining * 1e3:.4g} ms for transmission")
        r_min[i] = u.packet_size_bits / remaining
        weight[i] = remaining

    mask = scn.allocation_mask()
    serving = scn.serving if U else np.zeros(0, dtype=int)
    G = scn.gains.gain
    thr = scn.interference.threshold_w

    # pairs whose power is pinned to zero by a zero-threshold victim
    silenced = set()
    for i, k in zip(*np.nonzero(mask)):
        if thr[i, k] > 0:
            continue
        for s in range(U):
            if serving[s] != serving[i] and mask[s, k] and G[s, serving[i], k] > 0:
                silenced.add((s, int(k)))
    pairs = [(int(i), int(k)) for i, k in zip(*np.nonzero(mask)) if (i, k) not in silenced]
    m = len(pairs)
    npt = scn.noise[:, None] + thr if U else np.zeros((0, scn.num_subchannels))
    p_ref = np.array([npt[i, k] / G[i, serving[i], k] for i, k in pairs])
    index = {pk: e for e, pk in enumerate(pairs)}
    user = np.array([i for i, _ in pairs], dtype=int)

    rows, labels = {}, {}

    def add(name, entries, rhs, label):
        A, b, lab = rows.setdefault(name, ([], [], []))[0], rows[name][1], rows[name][2]
        A.append(entries)
        b.append(rhs)
        lab.append(label)

    # C1: sum_k p_ref p' <= p_max
    for u in scn.users:
        ent = {index[(u.id, k)]: p_ref[index[(u.id, k)]]
               for k in u.allocated_subchannels if (u.id, k) in index}
        if ent:
            add("C1", ent, u.max_power_w, f"user {u.id}")
    # C2: sum w nu' <= C_bh
    if m:
        add("C2", {m + e: w for e in range(m)}, scn.backhaul.capacity_bps, "backhaul")
    # C5 / C6 with the placement's memberships
    for n in range(N):
        ent = {}
        for u in scn.users:
            share = float(np.sum(pl.x[u.id][:, n])) * u.cpu_cycles_per_bit
            if share > 0:
                for e in np.flatnonzero(user == u.id):
                    ent[m + e] = ent.get(m + e, 0.0) + share * w
        if ent:
            add("C5", ent, float(dc.capacity_cycles_per_s[n]), f"server {n}")
    for l in range(L):
        ent = {}
        for u in scn.users:
            share = float(np.sum(pl.y[u.id][:, l])) if pl.y[u.id].size else 0.0
            if share > 0:
                for e in np.flatnonzero(user == u.id):
                    ent[m + e] = ent.get(m + e, 0.0) + share * w
        if ent:
            add("C6", ent, float(dc.bandwidth_bps[l]), f"link {l}")
    # C8: -sum_k w nu' <= -r_min
    for u in scn.users:
        if r_min[u.id] > 0:
            ent = {m + e: -w for e in np.flatnonzero(user == u.id)}
            if not ent:
                raise InfeasibleBudgetError(u.id, f"user {u.id}: no usable sub-channel")
            add("C8", ent, -r_min[u.id], f"user {u.id}")
    # C13: out-of-cell received power at the victim's BS on k
    for i, k in zip(*np.nonzero(mask)):
        if thr[i, k] <= 0:
            continue
        ent = {}
        for s in range(U):
            if serving[s] != serving[i] and (s, int(k)) in index:
                e = index[(s, int(k))]
                ent[e] = p_ref[e] * G[s, serving[i], k]
        if ent:
            add("C13", ent, float(thr[i, k]), f"user {int(i)} subchannel {int(k)}")

    mats = {}
    for name, (A, b, lab) in rows.items():
        data, ri, ci = [], [], []
        for r, ent in enumerate(A):
            for c, v in ent.items():
                ri.append(r)
                ci.append(c)
                data.append(v)
        mats[name] = (sp.csr_matrix((data, (ri, ci)), shape=(len(A), 2 * m)), np.array(b, float))
        labels[name] = lab

    return PowerSubproblem(scn, pl, r_min, weight, t_cn, pairs, p_ref,
                           sorted(silenced), mats, labels)


# --------------------------------------------------------------------------
# helpers shared by both formulations
# --------------------------------------------------------------------------

def _objective_coef(sub: PowerSubproblem) -> np.ndarray:
    return sub.weight_s[sub.user_of()] * sub.p_ref if sub.size else np.zeros(0)


def _linear(sub: PowerSubproblem, families):
    blocks = [sub.rows[f] for f in families if f in sub.rows]
    if not blocks:
        return None, None
    A = sp.vstack([b[0] for b in blocks], format="csr")
    b = np.concatenate([b[1] for b in blocks])
    return A, b


def _to_allocation(sub: PowerSubproblem, nu_scaled: np.ndarray) -> PowerAllocation:
    """Powers from scaled rates, with each user's rate trimmed to ``r_min``.

    Lowering rates only relaxes every constraint and lowers every power, so
    the trim is a pure improvement over the interior barrier iterate.
    """
    scn = sub.scenario
    w = scn.spectrum.subchannel_bandwidth_hz
    nu = np.maximum(np.asarray(nu_scaled, float), 0.0).copy()
    user = sub.user_of()
    for i in range(scn.num_users):
        sel = user == i
        total = float(nu[sel].sum()) * w
        target = sub.r_min[i]
        if target == 0:
            nu[sel] = 0.0
        elif total > target:
            nu[sel] *= target / total
    P = np.zeros((scn.num_users, scn.num_subchannels))
    NU = np.zeros_like(P)
    for e, (i, k) in enumerate(sub.pairs):
        P[i, k] = sub.p_ref[e] * math.expm1(nu[e] * LN2)
        NU[i, k] = nu[e] * w
    return PowerAllocation(P, NU)


def objective_value(sub: PowerSubproblem, alloc: PowerAllocation) -> float:
    """``sum_i a_i sum_k p_i^k`` in joules."""
    return float(np.dot(sub.weight_s, alloc.p.sum(axis=1))) if sub.scenario.num_users else 0.0


def _diagnose(sub: PowerSubproblem, p_scaled, nu_scaled) -> str:
    """Constraint family that is hardest to satisfy, for infeasibility reports."""
    scn = sub.scenario
    w = scn.spectrum.subchannel_bandwidth_hz
    user = sub.user_of()
    # exact single-family certificates first
    cap = np.zeros(scn.num_users)
    for e, (i, k) in enumerate(sub.pairs):
        u = scn.users[i]
        cap[i] += w * math.log2(1.0 + u.max_power_w / sub.p_ref[e])
    for i in range(scn.num_users):
        if sub.r_min[i] > cap[i] * (1 + 1e-12):
            return "C1"
    if float(sub.r_min.sum()) > scn.backhaul.capacity_bps:
        return "C2"
    for fam in ("C5", "C6"):
        if fam in sub.rows:
            A, b = sub.rows[fam]
            m = sub.size
            # rates at their minimum fix the loads exactly
            nu_min = np.zeros(m)
            for i in range(scn.num_users):
                sel = np.flatnonzero(user == i)
                if sel.size:
                    nu_min[sel] = sub.r_min[i] / w / sel.size
            if np.any(A @ np.concatenate([np.zeros(m), nu_min]) > b * (1 + 1e-12)):
                return fam
    if p_scaled is None:
        return "C13"
    z = np.concatenate([p_scaled, nu_scaled])
    worst, fam = -np.inf, "C13"
    for name, (A, b) in sub.rows.items():
        v = float(np.max((A @ z - b) / np.maximum(np.abs(b), 1e-300), initial=-np.inf))
        if v > worst:
            worst, fam = v, name
    return fam


def _trivial(sub: PowerSubproblem):
    if sub.size == 0 or not np.any(sub.r_min > 0):
        alloc = PowerAllocation.zeros(sub.scenario)
        return alloc, SolveStatus(OPTIMAL, 0.0, np.zeros(2 * sub.size), 0.0, 0, 0.0)
    return None


def _status_out(sub, alloc, st, info_extra=None):
    obj = objective_value(sub, alloc)
    info = dict(st.info)
    if info_extra:
        info.update(info_extra)
    return SolveStatus(st.status, obj, st.x, st.max_violation, st.iterations, st.kkt_residual,
                       message=st.message, info=info)


# --------------------------------------------------------------------------
# joint (p, nu) formulation
# --------------------------------------------------------------------------

def solve_power(sub: PowerSubproblem, tol: float = DEFAULT_TOL):
    """Solve the (p, nu) program; returns ``(PowerAllocation | None, SolveStatus)``."""
    triv = _trivial(sub)
    if triv is not None:
        return triv
    m = sub.size
    c = _objective_coef(sub)
    scale = float(c.max())
    c = c / scale
    grad = np.concatenate([c, np.zeros(m)])
    zero_h = np.zeros(2 * m)

    def objective(z):
        return float(c @ z[:m]), grad, zero_h

    def fun(z):
        return np.log1p(z[:m]) / LN2 - z[m:]

    J = np.zeros((m, 2 * m))
    J[:, m:] = -np.eye(m)
    diag = np.arange(m)

    def jac(z):
        J[diag, diag] = 1.0 / ((1.0 + z[:m]) * LN2)
        return J.copy()

    def hess(z, wt):
        d = np.concatenate([-wt / ((1.0 + z[:m]) ** 2 * LN2), np.zeros(m)])
        return np.diag(d)

    A, b = _linear(sub, ("C1", "C2", "C5", "C6", "C8", "C13"))
    lower = np.zeros(2 * m)
    upper = np.concatenate([np.full(m, np.inf), np.full(m, MAX_SPECTRAL_EFFICIENCY)])
    x0 = _start_point(sub)
    cp = ConvexProgram(2 * m, objective, A, b, lower=lower, upper=upper,
                       concave=ConcaveConstraints(fun, jac, hess, m),
                       x0=np.concatenate([x0, 0.5 * np.log2(1.0 + x0)]))
    st = solve_convex(cp, tol=tol)
    if st.status == INFEASIBLE:
        fam = _diagnose(sub, None if st.x is None else st.x[:m],
                        None if st.x is None else st.x[m:])
        return None, SolveStatus(INFEASIBLE, iterations=st.iterations,
                                 max_violation=st.max_violation,
                                 message=f"power control infeasible; binding family {fam}",
                                 info={"family": fam})
    alloc = _to_allocation(sub, st.x[m:])
    return alloc, _status_out(sub, alloc, st)


def _start_point(sub: PowerSubproblem) -> np.ndarray:
    """Small positive scaled powers well inside C1 and C13."""
    scn = sub.scenario
    p0 = np.empty(sub.size)
    counts = np.bincount(sub.user_of(), minlength=scn.num_users)
    for e, (i, _) in enumerate(sub.pairs):
        p0[e] = 1e-3 * scn.users[i].max_power_w / counts[i] / sub.p_ref[e]
    return p0


# --------------------------------------------------------------------------
# reduced formulation in nu only
# --------------------------------------------------------------------------

def reduce_and_solve(sub: PowerSubproblem, tol: float = DEFAULT_TOL):
    """Eliminate ``p = p_ref (2^nu' - 1)`` and solve in the rates alone.

    Independent cross-check of :func:`solve_power`; same return convention.
    """
    triv = _trivial(sub)
    if triv is not None:
        return triv
    m = sub.size
    c = _objective_coef(sub)
    c = c / float(c.max())

    def objective(v):
        e = np.exp2(v)
        return float(c @ (e - 1.0)), c * LN2 * e, c * LN2 * LN2 * e

    # concave rows: rhs - sum coef * (2^v - 1) >= 0 for C1 and C13
    cfam = [f for f in ("C1", "C13") if f in sub.rows]
    if cfam:
        Cm = sp.vstack([sub.rows[f][0][:, :m] for f in cfam], format="csr")
        cb = np.concatenate([sub.rows[f][1] for f in cfam])
        norms = np.asarray(abs(Cm).max(axis=1).todense()).reshape(-1)
        Cm = sp.diags(1.0 / norms) @ Cm
        cb = cb / norms
        Cd = Cm.toarray()

        def fun(v):
            return cb - Cm @ (np.exp2(v) - 1.0)

        def jac(v):
            return -Cd * (LN2 * np.exp2(v))[None, :]

        def hess(v, wt):
            return np.diag(-(wt @ Cd) * LN2 * LN2 * np.exp2(v))

        concave = ConcaveConstraints(fun, jac, hess, Cm.shape[0])
    else:
        concave = None
    A, b = _linear(sub, ("C2", "C5", "C6", "C8"))
    if A is not None:
        A = A[:, m:]
    x0 = np.log2(1.0 + _start_point(sub))
    if concave is not None:
        # exponential rows are slow for phase I, so start strictly inside them
        while np.any(concave.fun(x0) <= 0) and x0.max() > 1e-12:
            x0 = 0.5 * x0
    cp = ConvexProgram(m, objective, A, b, lower=np.zeros(m),
                       upper=np.full(m, MAX_SPECTRAL_EFFICIENCY), concave=concave, x0=x0)
    st = solve_convex(cp, tol=tol)
    if st.status == INFEASIBLE:
        fam = _diagnose(sub, None, None)
        return None, SolveStatus(INFEASIBLE, iterations=st.iterations,
                                 message=f"power control infeasible; binding family {fam}",
                                 info={"family": fam})
    alloc = _to_allocation(sub, st.x)
    return alloc, _status_out(sub, alloc, st)


def is_feasible(sub: PowerSubproblem, alloc: PowerAllocation, rel_tol: float = 1e-9) -> bool:
    """Whether ``alloc`` satisfies every constraint of ``sub`` (relative slack ``rel_tol``)."""
    w = sub.scenario.spectrum.subchannel_bandwidth_hz
    for i, k in sub.silenced:
        if alloc.p[i, k] > 0:
            return False
    if sub.size == 0:
        return True
    p = np.array([alloc.p[i, k] for i, k in sub.pairs]) / sub.p_ref
    nu = np.array([alloc.nu[i, k] for i, k in sub.pairs]) / w
    if np.any(p < 0) or np.any(nu > np.log2(1.0 + p) * (1 + rel_tol) + 1e-15):
        return False
    z = np.concatenate([p, nu])
    for A, b in sub.rows.values():
        if np.any(A @ z - b > rel_tol * np.maximum(np.abs(b), 1e-300)):
            return False
    return True
