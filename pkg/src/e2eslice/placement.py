"""Core-network server and link allocation for fixed user rates.

The binary placement problem is relaxed to [0, 1] and the binary
requirement is pushed back by the concave penalties ``zeta * sum(v - v^2)``.
Each pass linearizes the penalty at the previous iterate, which gives an LP
that majorizes the penalized objective, so the penalized objective never
increases from pass to pass.
"""

from __future__ import annotations

import heapq
import itertools
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import InitializationError, PathError, RoundingInfeasibleError
from .model import FEAS_ABS_TOL, FEAS_REL_TOL, Placement, Scenario
from .solvers import INFEASIBLE, OPTIMAL, LinearProgram, solve_lp

FRACTIONALITY_TOL = 1e-3
ZETA_FACTOR = 10.0


@dataclass(eq=False)
class PlacementSubproblem:
    """Placement problem for fixed aggregate user rates.

    ``core_budget_s[i]`` is the delay left for processing and inter-server
    links once RAN, backhaul and transport delays are accounted for.
    """

    scenario: Scenario
    rates_bps: np.ndarray
    core_budget_s: np.ndarray
    zeta1: float | None = None
    zeta2: float | None = None
    previous: Placement | None = None
    cap: int = 30

    def __post_init__(self):
        scn = self.scenario
        self.rates_bps = np.asarray(self.rates_bps, float).reshape(scn.num_users)
        self.core_budget_s = np.asarray(self.core_budget_s, float).reshape(scn.num_users)
        coef = self.energy_coefficients()
        peak = max((float(c.max()) for c in coef if c.size), default=0.0)
        default = ZETA_FACTOR * peak if peak > 0 else 1.0
        if self.zeta1 is None:
            self.zeta1 = default
        if self.zeta2 is None:
            self.zeta2 = default
        if not (self.zeta1 > 0 and self.zeta2 > 0):
            raise ValueError("penalty factors must be positive")
        if self.cap < 1:
            raise ValueError("Taylor pass cap must be >= 1")
        if self.previous is not None:
            for a in self.previous.x + self.previous.y:
                if np.any(a < -1e-9) or np.any(a > 1 + 1e-9):
                    raise ValueError("previous iterate must lie in [0, 1]")

    @classmethod
    def from_rates(cls, scn: Scenario, rates_bps, **kw) -> "PlacementSubproblem":
        """Core budget from the full delay budget minus the RAN delay at ``rates_bps``."""
        rates = np.asarray(rates_bps, float)
        budget = np.empty(scn.num_users)
        for u in scn.users:
            r = rates[u.id]
            t_tx = u.packet_size_bits / r if r > 0 else math.inf
            budget[u.id] = (u.delay_budget_s - u.ran_constant_delay_s - t_tx
                            - u.packet_size_bits / scn.backhaul.capacity_bps
                            - u.transport_delay_s)
        return cls(scn, rates, budget, **kw)

    def energy_coefficients(self) -> list[np.ndarray]:
        """Per-user (J, N) core-energy coefficient of each x."""
        dc = self.scenario.datacenter
        out = []
        for u in self.scenario.users:
            c = dc.power_per_cycle_w * u.cpu_cycles_per_bit * u.packet_size_bits \
                / dc.capacity_cycles_per_s
            out.append(np.tile(c, (u.num_vnfs, 1)))
        return out

    def with_zeta(self, zeta1, zeta2) -> "PlacementSubproblem":
        return PlacementSubproblem(self.scenario, self.rates_bps, self.core_budget_s,
                                   zeta1, zeta2, self.previous, self.cap)


class _Layout:
    """Offsets of each user's x and y blocks inside the flat LP vector."""

    def __init__(self, scn: Scenario):
        N, L = scn.datacenter.num_servers, scn.datacenter.num_links
        self.N, self.L = N, L
        self.x_off, self.y_off = [], []
        off = 0
        for u in scn.users:
            self.x_off.append(off)
            off += u.num_vnfs * N
        for u in scn.users:
            self.y_off.append(off)
            off += (u.num_vnfs - 1) * L
        self.size = off
        self.shapes = [(u.num_vnfs, N, u.num_vnfs - 1, L) for u in scn.users]

    def xi(self, i, j, n):
        return self.x_off[i] + j * self.N + n

    def yi(self, i, j, l):
        return self.y_off[i] + j * self.L + l

    def split(self, v, mode="relaxed") -> Placement:
        v = np.clip(np.asarray(v, float), 0.0, 1.0)
        xs, ys = [], []
        for i, (J, N, Jy, L) in enumerate(self.shapes):
            xs.append(v[self.x_off[i]:self.x_off[i] + J * N].reshape(J, N))
            ys.append(v[self.y_off[i]:self.y_off[i] + Jy * L].reshape(Jy, L))
        return Placement(tuple(xs), tuple(ys), mode)

    def flat(self, pl: Placement) -> np.ndarray:
        v = np.zeros(self.size)
        for i, (J, N, Jy, L) in enumerate(self.shapes):
            v[self.x_off[i]:self.x_off[i] + J * N] = pl.x[i].ravel()
            v[self.y_off[i]:self.y_off[i] + Jy * L] = pl.y[i].ravel()
        return v


def build_lp(sub: PlacementSubproblem) -> LinearProgram:
    """LP of one Taylor pass (linearized penalty at ``sub.previous``).

    Without a previous iterate the penalty is dropped and the plain LP
    relaxation is returned.
    """
    rows = _constraint_rows(sub)
    c, offset = _objective(sub)
    n_var = c.size
    return LinearProgram(c, *rows, lower=np.zeros(n_var), upper=np.ones(n_var), offset=offset)


def _objective(sub: PlacementSubproblem):
    """Core energy plus the penalty linearized at ``sub.previous`` (if any)."""
    lay = _Layout(sub.scenario)
    c = np.zeros(lay.size)
    offset = 0.0
    for i, coef in enumerate(sub.energy_coefficients()):
        c[lay.x_off[i]:lay.x_off[i] + coef.size] = coef.ravel()
    if sub.previous is not None:
        prev = lay.flat(sub.previous)
        is_x = np.zeros(lay.size, dtype=bool)
        for i, (J, N, _, _) in enumerate(lay.shapes):
            is_x[lay.x_off[i]:lay.x_off[i] + J * N] = True
        zeta = np.where(is_x, sub.zeta1, sub.zeta2)
        c += zeta * (1.0 - 2.0 * prev)
        offset = float(np.sum(zeta * prev * prev))
    return c, offset


def _constraint_rows(sub: PlacementSubproblem):
    """``(A_ub, b_ub, A_eq, b_eq)``; independent of the penalty and the iterate."""
    scn = sub.scenario
    dc = scn.datacenter
    lay = _Layout(scn)
    n_var = lay.size

    eq_r, eq_c, eq_v, b_eq = [], [], [], []
    ub_r, ub_c, ub_v, b_ub = [], [], [], []

    def eq_row(entries, rhs):
        r = len(b_eq)
        for col, val in entries:
            eq_r.append(r)
            eq_c.append(col)
            eq_v.append(val)
        b_eq.append(rhs)

    def ub_row(entries, rhs):
        r = len(b_ub)
        for col, val in entries:
            ub_r.append(r)
            ub_c.append(col)
            ub_v.append(val)
        b_ub.append(rhs)

    N, L = lay.N, lay.L
    for u in scn.users:
        i, J = u.id, u.num_vnfs
        for j in range(J):                                    # C3
            eq_row([(lay.xi(i, j, n), 1.0) for n in range(N)], 1.0)
        if J > 1:
            for n in range(N):                                # C4
                ub_row([(lay.xi(i, j, n), 1.0) for j in range(J)], 1.0)
        for j in range(J - 1):                                # C7
            for n in range(N):
                ent = [(lay.yi(i, j, l), 1.0) for l in dc.out_links(n)]
                ent += [(lay.yi(i, j, l), -1.0) for l in dc.in_links(n)]
                ent += [(lay.xi(i, j, n), -1.0), (lay.xi(i, j + 1, n), 1.0)]
                eq_row(ent, 0.0)
                # valid for binary points under C4: a stage leaves the server
                # of VNF j and enters the server of VNF j+1
                ub_row([(lay.xi(i, j, n), 1.0)]
                       + [(lay.yi(i, j, l), -1.0) for l in dc.out_links(n)], 0.0)
                ub_row([(lay.xi(i, j + 1, n), 1.0)]
                       + [(lay.yi(i, j, l), -1.0) for l in dc.in_links(n)], 0.0)
    rates = sub.rates_bps
    for n in range(N):                                        # C5
        ent = [(lay.xi(u.id, j, n), u.cpu_cycles_per_bit * rates[u.id])
               for u in scn.users for j in range(u.num_vnfs) if rates[u.id] > 0]
        if ent:
            ub_row(ent, float(dc.capacity_cycles_per_s[n]))
    for l in range(L):                                        # C6
        ent = [(lay.yi(u.id, j, l), rates[u.id])
               for u in scn.users for j in range(u.num_vnfs - 1) if rates[u.id] > 0]
        if ent:
            ub_row(ent, float(dc.bandwidth_bps[l]))
    for u in scn.users:                                       # C8 (core share)
        i, D = u.id, u.packet_size_bits
        ent = [(lay.xi(i, j, n), u.cpu_cycles_per_bit * D / dc.capacity_cycles_per_s[n])
               for j in range(u.num_vnfs) for n in range(N)]
        ent += [(lay.yi(i, j, l), D / dc.bandwidth_bps[l])
                for j in range(u.num_vnfs - 1) for l in range(L)]
        ub_row(ent, float(sub.core_budget_s[i]))

    A_eq = sp.csr_matrix((eq_v, (eq_r, eq_c)), shape=(len(b_eq), n_var))
    A_ub = sp.csr_matrix((ub_v, (ub_r, ub_c)), shape=(len(b_ub), n_var))
    return A_ub, np.array(b_ub), A_eq, np.array(b_eq)


def penalty(pl: Placement) -> tuple[float, float]:
    """``(sum x - x^2, sum y - y^2)``; zero exactly at binary points."""
    px = sum(float(np.sum(a - a * a)) for a in pl.x)
    py = sum(float(np.sum(a - a * a)) for a in pl.y)
    return px, py


def core_energy_total(sub: PlacementSubproblem, pl: Placement) -> float:
    return sum(float(np.sum(c * x)) for c, x in zip(sub.energy_coefficients(), pl.x))


def penalized_objective(sub: PlacementSubproblem, pl: Placement) -> float:
    """Core energy plus the exact (non-linearized) penalties."""
    px, py = penalty(pl)
    return core_energy_total(sub, pl) + sub.zeta1 * px + sub.zeta2 * py


@dataclass
class TaylorResult:
    status: str
    placement: Placement | None
    trace: list[dict] = field(default_factory=list)
    passes: int = 0
    zeta: tuple[float, float] = (math.nan, math.nan)
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL

    def descent_ok(self, slack: float = 1e-9) -> bool:
        return all(t["after"] <= t["before"] + slack * max(1.0, abs(t["before"]))
                   for t in self.trace if t["before"] is not None)


def taylor_iterate(sub: PlacementSubproblem, tol: float = 1e-9, cap: int | None = None,
                   start: Placement | None = None, lp_method: str = "highs") -> TaylorResult:
    """Iterate penalized LPs until the penalized objective stalls at a near-binary point.

    Without ``start`` (and without ``sub.previous``) the first pass solves the
    plain LP relaxation.  The penalty weight doubles after every pass that
    leaves the iterate fractional.  A fractional iterate that stops moving is
    replaced by its binary extraction when that is feasible and no worse in
    the penalized objective; otherwise the next linearization point is nudged
    toward the argmax rounding to break the tie.
    """
    cap = sub.cap if cap is None else cap
    zeta1, zeta2 = sub.zeta1, sub.zeta2
    current = start if start is not None else sub.previous
    trace: list[dict] = []
    lay = _Layout(sub.scenario)
    rows = _constraint_rows(sub)
    box = (np.zeros(lay.size), np.ones(lay.size))

    def lp_for(step):
        c, offset = _objective(step)
        return LinearProgram(c, *rows, lower=box[0], upper=box[1], offset=offset)

    if current is None:
        st = solve_lp(lp_for(PlacementSubproblem(sub.scenario, sub.rates_bps, sub.core_budget_s,
                                                 zeta1, zeta2, None, cap)), method=lp_method)
        if st.status != OPTIMAL:
            return TaylorResult(st.status, None, trace, 0, (zeta1, zeta2),
                                message=f"LP relaxation {st.status}: no placement fits the budgets")
        current = lay.split(st.x)
        trace.append({"pass": 0, "zeta": zeta1, "before": None,
                      "after": penalized_objective(sub.with_zeta(zeta1, zeta2), current),
                      "energy": core_energy_total(sub, current),
                      "fractionality": current.max_fractionality()})

    anchor = current
    for t in range(1, cap + 1):
        step = PlacementSubproblem(sub.scenario, sub.rates_bps, sub.core_budget_s,
                                   zeta1, zeta2, anchor, cap)
        st = solve_lp(lp_for(step), method=lp_method)
        if st.status != OPTIMAL:
            return TaylorResult(st.status, current, trace, t, (zeta1, zeta2),
                                message=f"Taylor LP {st.status}")
        nxt = lay.split(st.x)
        before = penalized_objective(step, current)
        after = penalized_objective(step, nxt)
        if after > before:
            # a nudged anchor or round-off can leave the LP optimum behind the
            # current point; keep the better one so the trace stays monotone
            nxt, after = current, before
        frac = nxt.max_fractionality()
        record = {"pass": t, "zeta": zeta1, "before": before, "after": after,
                  "energy": core_energy_total(sub, nxt), "fractionality": frac}
        trace.append(record)
        stalled = before - after <= tol * max(1.0, abs(before))
        current = anchor = nxt
        if frac <= FRACTIONALITY_TOL:
            if stalled:
                break
            continue
        if stalled:
            binary = _escape(sub, current)
            if binary is not None and penalized_objective(step, binary) <= after:
                record.update(after=penalized_objective(step, binary),
                              energy=core_energy_total(sub, binary), fractionality=0.0,
                              escape=True)
                current = binary
                break
            anchor = _nudge(sub.scenario, current)
        zeta1 *= 2.0
        zeta2 *= 2.0
    return TaylorResult(OPTIMAL, current, trace, len(trace) - (trace[0]["before"] is None
                                                              if trace else 0),
                        (zeta1, zeta2))


def _escape(sub, relaxed):
    """Binary repair of a stalled fractional iterate, if feasible."""
    try:
        return extract_binary(relaxed, sub)
    except (RoundingInfeasibleError, PathError):
        return None


def _nudge(scn: Scenario, pl: Placement, weight: float = 1e-2) -> Placement:
    """Move a relaxed point slightly toward its argmax rounding (tie breaking)."""
    try:
        target = _argmax_placement(scn, pl)
    except (PathError, RoundingInfeasibleError):
        return pl
    xs = tuple((1 - weight) * a + weight * b for a, b in zip(pl.x, target.x))
    ys = tuple((1 - weight) * a + weight * b for a, b in zip(pl.y, target.y))
    return Placement(xs, ys, "relaxed")


# --------------------------------------------------------------------------
# Binary extraction
# --------------------------------------------------------------------------

def shortest_path(scn: Scenario, src: int, dst: int, usable=None) -> list[int]:
    """Hop-shortest directed path as a list of link ids.

    Among equally short paths the lexicographically smallest node sequence
    wins.  ``usable(l)`` may exclude links.
    """
    dc = scn.datacenter
    if src == dst:
        return []
    ok = (lambda l: True) if usable is None else usable
    # BFS distances to dst over reversed links
    dist = {dst: 0}
    queue = deque([dst])
    while queue:
        v = queue.popleft()
        for l in dc.in_links(v):
            a = int(dc.link_src[l])
            if a not in dist and ok(l):
                dist[a] = dist[v] + 1
                queue.append(a)
    if src not in dist:
        raise PathError(f"no directed path from server {src} to server {dst}")
    path, v = [], src
    while v != dst:
        best = None
        for l in dc.out_links(v):
            b = int(dc.link_dst[l])
            if ok(l) and dist.get(b) == dist[v] - 1 and (best is None or b < best[0]):
                best = (b, l)
        path.append(best[1])
        v = best[0]
    return path


def fastest_path(scn: Scenario, src: int, dst: int, bits: float, usable=None) -> list[int]:
    """Minimum-delay directed path (Dijkstra on ``bits / bandwidth``)."""
    dc = scn.datacenter
    if src == dst:
        return []
    ok = (lambda l: True) if usable is None else usable
    best = {src: (0.0, ())}
    heap = [(0.0, (src,), src, ())]
    done = set()
    while heap:
        d, nodes, v, links = heapq.heappop(heap)
        if v in done:
            continue
        done.add(v)
        if v == dst:
            return list(links)
        for l in dc.out_links(v):
            b = int(dc.link_dst[l])
            if b in done or not ok(l):
                continue
            nd = d + bits / float(dc.bandwidth_bps[l])
            if b not in best or nd < best[b][0]:
                best[b] = (nd, links + (l,))
                heapq.heappush(heap, (nd, nodes + (b,), b, links + (l,)))
    raise PathError(f"no directed path from server {src} to server {dst}")


def k_fastest_paths(scn: Scenario, src: int, dst: int, bits: float, k: int,
                    usable=None) -> list[list[int]]:
    """Up to ``k`` loop-free paths in increasing delay order (Yen's algorithm)."""
    dc = scn.datacenter
    ok = (lambda l: True) if usable is None else usable
    if src == dst:
        return [[]]

    def delay(p):
        return sum(bits / float(dc.bandwidth_bps[l]) for l in p)

    def nodes(p):
        return [src] + [int(dc.link_dst[l]) for l in p]

    try:
        found = [fastest_path(scn, src, dst, bits, ok)]
    except PathError:
        return []
    pool: list[tuple[float, tuple[int, ...]]] = []
    while len(found) < k:
        last = found[-1]
        last_nodes = nodes(last)
        for s_idx in range(len(last)):
            spur = last_nodes[s_idx]
            root = last[:s_idx]
            banned_links = {p[s_idx] for p in found if p[:s_idx] == root and len(p) > s_idx}
            banned_nodes = set(last_nodes[:s_idx])

            def allowed(l, banned_links=banned_links, banned_nodes=banned_nodes):
                return (ok(l) and l not in banned_links
                        and int(dc.link_dst[l]) not in banned_nodes
                        and int(dc.link_src[l]) not in banned_nodes)

            try:
                tail = fastest_path(scn, spur, dst, bits, allowed)
            except PathError:
                continue
            cand = tuple(root + tail)
            if list(cand) not in found and all(c != cand for _, c in pool):
                heapq.heappush(pool, (delay(cand), cand))
        if not pool:
            break
        found.append(list(heapq.heappop(pool)[1]))
    return found


def _server_sequences(x: np.ndarray, limit: int):
    """Distinct-server sequences, argmax first, then by decreasing relaxed weight."""
    first = _choose_servers(x)
    yield tuple(first)
    support = [sorted((n for n in range(row.size) if row[n] > 1e-6), key=lambda n: (-row[n], n))
               for row in x]
    combos = []
    for seq in itertools.islice(itertools.product(*support), limit):
        if len(set(seq)) == len(seq) and list(seq) != first:
            combos.append(seq)
    combos.sort(key=lambda s: (-sum(x[j, n] for j, n in enumerate(s)), s))
    yield from combos


def _choose_servers(x: np.ndarray) -> list[int]:
    chosen: list[int] = []
    for row in x:
        order = sorted(range(row.size), key=lambda n: (-row[n], n))
        pick = next((n for n in order if n not in chosen), None)
        if pick is None:
            raise RoundingInfeasibleError("more VNFs than servers in one SFC")
        chosen.append(pick)
    return chosen


def _over(lhs, rhs):
    return lhs - rhs > FEAS_ABS_TOL + FEAS_REL_TOL * abs(rhs)


def violations(sub: PlacementSubproblem, pl: Placement) -> list[str]:
    scn = sub.scenario
    dc = scn.datacenter
    rates = sub.rates_bps
    out = []
    load = np.zeros(dc.num_servers)
    link = np.zeros(dc.num_links)
    for u in scn.users:
        load += pl.x[u.id].sum(axis=0) * u.cpu_cycles_per_bit * rates[u.id]
        if pl.y[u.id].size:
            link += pl.y[u.id].sum(axis=0) * rates[u.id]
        if _over(_stage_delay(scn, u, pl.x[u.id], pl.y[u.id]), sub.core_budget_s[u.id]):
            out.append(f"C8 user {u.id}")
    out += [f"C5 server {n}" for n in range(dc.num_servers)
            if _over(load[n], dc.capacity_cycles_per_s[n])]
    out += [f"C6 link {l}" for l in range(dc.num_links) if _over(link[l], dc.bandwidth_bps[l])]
    return out


def _stage_delay(scn, u, x, y) -> float:
    dc = scn.datacenter
    D = u.packet_size_bits
    t = float(np.sum(x @ (u.cpu_cycles_per_bit * D / dc.capacity_cycles_per_s)))
    if y.size:
        t += float(np.sum(y @ (D / dc.bandwidth_bps)))
    return t


def _flow_ok(scn: Scenario, pl: Placement) -> bool:
    dc = scn.datacenter
    for u in scn.users:
        x, y = pl.x[u.id], pl.y[u.id]
        for j in range(u.num_vnfs - 1):
            for n in range(dc.num_servers):
                net = y[j, list(dc.out_links(n))].sum() - y[j, list(dc.in_links(n))].sum()
                if net != x[j, n] - x[j + 1, n]:
                    return False
    return True


def extract_binary(relaxed: Placement, sub: PlacementSubproblem,
                   max_candidates: int = 4096) -> Placement:
    """Binary placement from a relaxed one, re-checked against C5, C6 and C8.

    Near-binary inputs are rounded.  Otherwise, and whenever the rounding
    breaks a constraint, users are placed in id order: the argmax server
    sequence (distinct within an SFC, ties to the lowest id) joined by
    lexicographic hop-shortest paths is tried first, then the remaining
    sequences in the relaxed support by decreasing weight, each with
    hop-shortest and then minimum-delay paths over links with spare
    bandwidth.  A depth-first branch and bound over server sequences (cheapest
    first) and the fastest few paths per stage then tries to beat that
    incumbent, visiting at most ``max_candidates`` nodes.
    """
    scn = sub.scenario
    if relaxed.max_fractionality() <= FRACTIONALITY_TOL:
        xs = tuple(np.round(a) for a in relaxed.x)
        ys = tuple(np.round(a) for a in relaxed.y)
        pl = Placement(xs, ys, "binary")
        valid = all(np.all(x.sum(axis=1) == 1) and np.all(x.sum(axis=0) <= 1) for x in xs)
        if valid and _flow_ok(scn, pl) and not violations(sub, pl):
            return pl
    try:
        incumbent = _search(sub, relaxed, max_candidates)
    except (RoundingInfeasibleError, PathError):
        incumbent = None
    better = _branch_and_bound(sub, incumbent, max_candidates)
    if better is not None:
        return better
    if incumbent is None:
        raise RoundingInfeasibleError("no binary placement fits C5/C6/C8 within the search budget")
    return incumbent


def _argmax_placement(scn: Scenario, relaxed: Placement) -> Placement:
    servers, paths = [], []
    for u in scn.users:
        chosen = _choose_servers(relaxed.x[u.id])
        servers.append(chosen)
        paths.append([shortest_path(scn, a, b) for a, b in zip(chosen, chosen[1:])])
    return Placement.from_servers(scn, servers, paths)


def _search(sub: PlacementSubproblem, relaxed: Placement, max_candidates: int) -> Placement:
    scn = sub.scenario
    dc = scn.datacenter
    resid = dc.capacity_cycles_per_s.astype(float).copy()
    link_resid = dc.bandwidth_bps.astype(float).copy()
    servers, paths = [], []
    for u in scn.users:
        r = float(sub.rates_bps[u.id])
        need = u.cpu_cycles_per_bit * r
        found = None
        for seq in _server_sequences(relaxed.x[u.id], max_candidates):
            if any(_over(need, resid[n]) for n in seq):
                continue
            for rule in ("hop", "hop-free", "delay"):
                try:
                    stage = _stage_paths(scn, seq, rule, u.packet_size_bits,
                                         lambda l: not _over(r, link_resid[l]))
                except PathError:
                    continue
                used = np.zeros(dc.num_links)
                for p in stage:
                    used[p] += 1.0
                if np.any([_over(used[l] * r, link_resid[l]) for l in np.flatnonzero(used)]):
                    continue
                x = np.zeros((u.num_vnfs, dc.num_servers))
                x[np.arange(u.num_vnfs), list(seq)] = 1.0
                y = np.zeros((u.num_vnfs - 1, dc.num_links))
                for j, p in enumerate(stage):
                    y[j, p] = 1.0
                if _over(_stage_delay(scn, u, x, y), sub.core_budget_s[u.id]):
                    continue
                found = (seq, stage, used)
                break
            if found:
                break
        if found is None:
            raise RoundingInfeasibleError(
                f"user {u.id}: no binary placement in the relaxed support fits C5/C6/C8")
        seq, stage, used = found
        for n in seq:
            resid[n] -= need
        link_resid -= used * r
        servers.append(list(seq))
        paths.append(stage)
    return Placement.from_servers(scn, servers, paths)


PATHS_PER_STAGE = 8
_SEQUENCE_LIMIT = 50_000


class _BudgetExhausted(Exception):
    pass


def _sequences_by_energy(coef: np.ndarray, J: int) -> list[tuple[float, tuple[int, ...]]]:
    N = coef.size
    pool = range(N)
    if math.perm(N, J) > _SEQUENCE_LIMIT:
        pool = sorted(range(N), key=lambda n: (coef[n], n))[:J + 5]
    out = [(float(sum(coef[n] for n in seq)), seq) for seq in itertools.permutations(pool, J)]
    out.sort()
    return out


def _branch_and_bound(sub: PlacementSubproblem, incumbent: Placement | None,
                      max_nodes: int) -> Placement | None:
    """Cheapest binary placement found within ``max_nodes`` nodes, if it beats ``incumbent``."""
    scn = sub.scenario
    dc = scn.datacenter
    users = scn.users
    coef = [c[0] for c in sub.energy_coefficients()]
    lb = [float(np.sort(c)[:u.num_vnfs].sum()) for c, u in zip(coef, users)]
    suffix = np.concatenate([np.cumsum(lb[::-1])[::-1], [0.0]])
    best_e = core_energy_total(sub, incumbent) if incumbent is not None else math.inf
    if suffix[0] >= best_e * (1.0 - 1e-12):
        return None
    seqs: dict[int, list] = {}
    best: list = [None]
    nodes = [0]
    resid = dc.capacity_cycles_per_s.astype(float).copy()
    link_resid = dc.bandwidth_bps.astype(float).copy()
    chosen: list = []

    def bound_ok(value):
        return value < best_e * (1.0 - 1e-12)

    def dfs(i, partial):
        nonlocal best_e
        if i == len(users):
            best_e = partial
            best[0] = list(chosen)
            return
        u = users[i]
        r = float(sub.rates_bps[i])
        need = u.cpu_cycles_per_bit * r
        if i not in seqs:
            seqs[i] = _sequences_by_energy(coef[i], u.num_vnfs)
        for e_seq, seq in seqs[i]:
            if not bound_ok(partial + e_seq + suffix[i + 1]):
                break
            if any(_over(need, resid[n]) for n in seq):
                continue
            usable = (lambda l: not _over(r, link_resid[l]))
            options = [k_fastest_paths(scn, a, b, u.packet_size_bits, PATHS_PER_STAGE, usable)
                       for a, b in zip(seq, seq[1:])]
            x = np.zeros((u.num_vnfs, dc.num_servers))
            x[np.arange(u.num_vnfs), list(seq)] = 1.0
            for stage in itertools.product(*options):
                nodes[0] += 1
                if nodes[0] > max_nodes:
                    raise _BudgetExhausted
                used = np.zeros(dc.num_links)
                for p in stage:
                    used[p] += 1.0
                if np.any([_over(used[l] * r, link_resid[l]) for l in np.flatnonzero(used)]):
                    continue
                y = np.zeros((u.num_vnfs - 1, dc.num_links))
                for j, p in enumerate(stage):
                    y[j, p] = 1.0
                if _over(_stage_delay(scn, u, x, y), sub.core_budget_s[i]):
                    continue
                for n in seq:
                    resid[n] -= need
                link_resid[:] -= used * r
                chosen.append((list(seq), [list(p) for p in stage]))
                before = best_e
                try:
                    dfs(i + 1, partial + e_seq)
                finally:
                    chosen.pop()
                    for n in seq:
                        resid[n] += need
                    link_resid[:] += used * r
                # paths do not change the energy; other paths only matter if later users failed
                if best_e < before:
                    break
            if not bound_ok(partial + e_seq + suffix[i + 1]):
                break

    try:
        dfs(0, 0.0)
    except _BudgetExhausted:
        pass
    if best[0] is None:
        return None
    return Placement.from_servers(scn, [c[0] for c in best[0]], [c[1] for c in best[0]])


def _stage_paths(scn, seq, rule, bits, usable):
    if rule == "hop":
        return [shortest_path(scn, a, b) for a, b in zip(seq, seq[1:])]
    if rule == "hop-free":
        return [shortest_path(scn, a, b, usable) for a, b in zip(seq, seq[1:])]
    return [fastest_path(scn, a, b, bits, usable) for a, b in zip(seq, seq[1:])]

# --------------------------------------------------------------------------
# Greedy initial point
# --------------------------------------------------------------------------

def rate_estimate(scn: Scenario) -> np.ndarray:
    """Smallest rate each user could possibly need (zero core delay)."""
    out = np.zeros(scn.num_users)
    for u in scn.users:
        slack = (u.delay_budget_s - u.ran_constant_delay_s
                 - u.packet_size_bits / scn.backhaul.capacity_bps - u.transport_delay_s)
        out[u.id] = u.packet_size_bits / slack if slack > 0 else math.inf
    return out


def initialize(scn: Scenario, rates_bps=None) -> Placement:
    """Greedy placement: largest residual capacity first, shortest feasible paths."""
    dc = scn.datacenter
    rates = rate_estimate(scn) if rates_bps is None else np.asarray(rates_bps, float)
    resid = dc.capacity_cycles_per_s.astype(float).copy()
    link_resid = dc.bandwidth_bps.astype(float).copy()
    servers, paths = [], []
    for u in scn.users:
        need = u.cpu_cycles_per_bit * rates[u.id]
        chosen = []
        for j in range(u.num_vnfs):
            cands = [n for n in range(dc.num_servers) if n not in chosen and resid[n] >= need]
            if not cands:
                raise InitializationError(
                    f"user {u.id}: no server has {need:.4g} cycles/s left for VNF {j}")
            n = min(cands, key=lambda n: (-resid[n], n))
            resid[n] -= need
            chosen.append(n)
        user_paths = []
        for a, b in zip(chosen, chosen[1:]):
            try:
                path = shortest_path(scn, a, b, usable=lambda l: link_resid[l] >= rates[u.id])
            except PathError as exc:
                raise InitializationError(f"user {u.id}: {exc}") from exc
            for l in path:
                link_resid[l] -= rates[u.id]
            user_paths.append(path)
        servers.append(chosen)
        paths.append(user_paths)
    return Placement.from_servers(scn, servers, paths)
