"""Brute-force references for tiny instances.

Both oracles re-derive every constraint from the model functions rather than
from the solver modules, so agreement between an oracle and a solver is an
independent check.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .model import (FEAS_ABS_TOL, FEAS_REL_TOL, BackhaulConfig, BaseStation, ChannelGains,
                    DataCenterGraph, InterferenceBudget, Placement, PowerAllocation, Scenario,
                    SpectrumConfig, UserProfile, core_delay, core_energy, rate_matrix)


@dataclass(frozen=True)
class TinyInstanceLimits:
    max_users: int = 2
    max_vnfs: int = 2
    max_servers: int = 4
    max_subchannels: int = 2

    def check(self, scn: Scenario):
        if scn.num_users > self.max_users:
            raise ValueError(f"oracle handles at most {self.max_users} users")
        if any(u.num_vnfs > self.max_vnfs for u in scn.users):
            raise ValueError(f"oracle handles SFCs of at most {self.max_vnfs} VNFs")
        if scn.datacenter.num_servers > self.max_servers:
            raise ValueError(f"oracle handles at most {self.max_servers} servers")
        if scn.num_subchannels > self.max_subchannels:
            raise ValueError(f"oracle handles at most {self.max_subchannels} sub-channels")


LIMITS = TinyInstanceLimits()


def tiny_scenario(seed: int, limits: TinyInstanceLimits = LIMITS, power_vars: int | None = None,
                  sfc_length: int | None = None) -> Scenario:
    """Random instance inside ``limits`` with constraints that actually bind.

    Capacities, bandwidths and budgets are drawn on the same scale as the
    loads, so capacity, delay and interference limits are active in a good
    share of draws.  ``power_vars`` fixes the number of allocated
    (user, sub-channel) pairs when given (1 or 2).
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x71,)))
    nvars = power_vars or int(rng.integers(1, 3))
    if nvars == 1:
        U, B, C, blocks = 1, 1, 1, [(0,)]
    elif rng.random() < 0.5 or limits.max_users < 2:
        U, B, C, blocks = 1, 1, 2, [(0, 1)]
    elif rng.random() < 0.5:
        U, B, C, blocks = 2, 1, 2, [(0,), (1,)]
    else:
        U, B, C, blocks = 2, 2, 1, [(0,), (0,)]
    U = min(U, limits.max_users)
    noise = 1e-14
    stations = tuple(BaseStation(m, (100.0 * m, 0.0), noise) for m in range(B))
    gain = rng.uniform(1e-13, 1e-12, size=(U, B, C))
    users = []
    for i in range(U):
        m = i % B
        gain[i, m] = rng.uniform(1e-11, 1e-10, size=C)
        J = sfc_length or int(rng.integers(1, limits.max_vnfs + 1))
        users.append(UserProfile(
            id=i, slice_id=i, serving_bs=m, packet_size_bits=100.0,
            cpu_cycles_per_bit=float(rng.uniform(1.0, 20.0)),
            sfc=tuple(f"vnf{j}" for j in range(J)),
            delay_budget_s=float(rng.uniform(4e-3, 12e-3)), ran_constant_delay_s=1e-3,
            transport_delay_s=0.5e-3, max_power_w=0.1, allocated_subchannels=blocks[i]))
    thr = noise * rng.uniform(1.0, 20.0, size=(U, C))
    N = int(rng.integers(max(u.num_vnfs for u in users), limits.max_servers + 1))
    N = max(N, 2)
    links = {(a, (a + 1) % N) for a in range(N)}
    for a in range(N):
        for b in range(N):
            if a != b and rng.random() < 0.4:
                links.add((a, b))
    pairs = sorted(links)
    dc = DataCenterGraph(
        capacity_cycles_per_s=rng.uniform(1e6, 5e6, size=N),
        power_per_cycle_w=rng.uniform(1.0, 10.0, size=N),
        link_src=np.array([a for a, _ in pairs]), link_dst=np.array([b for _, b in pairs]),
        bandwidth_bps=rng.uniform(5e4, 5e5, size=len(pairs)))
    return Scenario(
        spectrum=SpectrumConfig.from_subchannel_bandwidth(15e3, C),
        base_stations=stations, users=tuple(users), gains=ChannelGains(gain),
        interference=InterferenceBudget(thr),
        backhaul=BackhaulConfig(float(rng.uniform(1e5, 1e6)), (1.0,) * B),
        datacenter=dc, metadata={"tiny_seed": int(seed)})


def tiny_rates(scn: Scenario, seed: int) -> np.ndarray:
    """Random aggregate rates for placement tests, on the scale of tiny capacities."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x72,)))
    return rng.uniform(5e4, 3e5, size=scn.num_users)


@dataclass
class PlacementOracleResult:
    feasible: bool
    placement: Placement | None
    energy_j: float
    candidates: int


def _over(lhs, rhs):
    return lhs - rhs > FEAS_ABS_TOL + FEAS_REL_TOL * abs(rhs)


def simple_paths(scn: Scenario, src: int, dst: int) -> list[tuple[int, ...]]:
    """All simple directed paths from ``src`` to ``dst`` as link-id tuples."""
    dc = scn.datacenter
    out = []

    def walk(v, seen, links):
        if v == dst:
            out.append(tuple(links))
            return
        for l in dc.out_links(v):
            b = int(dc.link_dst[l])
            if b not in seen:
                walk(b, seen | {b}, links + [l])

    walk(src, {src}, [])
    return out


def brute_placement(scn: Scenario, rates_bps, core_budget_s=None,
                    limits: TinyInstanceLimits = LIMITS) -> PlacementOracleResult:
    """Minimum core-energy binary placement by exhaustive enumeration.

    ``core_budget_s`` defaults to the full budget minus the RAN delay at
    ``rates_bps``, backhaul and transport delays.  Ties go to the
    lexicographically smallest (servers, paths) encoding.
    """
    limits.check(scn)
    dc = scn.datacenter
    rates = np.asarray(rates_bps, float)
    if core_budget_s is None:
        core_budget_s = [u.delay_budget_s - u.ran_constant_delay_s
                         - u.packet_size_bits / rates[u.id]
                         - u.packet_size_bits / scn.backhaul.capacity_bps - u.transport_delay_s
                         for u in scn.users]
    budget = np.asarray(core_budget_s, float)

    per_user = []
    for u in scn.users:
        opts = []
        for seq in itertools.permutations(range(dc.num_servers), u.num_vnfs):
            stage_opts = [simple_paths(scn, a, b) for a, b in zip(seq, seq[1:])]
            for paths in itertools.product(*stage_opts):
                pl_u = _single(scn, u, seq, paths)
                if _over(pl_u["delay"], budget[u.id]):
                    continue
                opts.append((seq, paths, pl_u))
        per_user.append(opts)

    best, count = None, 0
    for combo in itertools.product(*per_user):
        count += 1
        load = np.zeros(dc.num_servers)
        link = np.zeros(dc.num_links)
        for u, (seq, paths, _) in zip(scn.users, combo):
            for n in seq:
                load[n] += u.cpu_cycles_per_bit * rates[u.id]
            for p in paths:
                for l in p:
                    link[l] += rates[u.id]
        if any(_over(load[n], dc.capacity_cycles_per_s[n]) for n in range(dc.num_servers)):
            continue
        if any(_over(link[l], dc.bandwidth_bps[l]) for l in range(dc.num_links)):
            continue
        energy = sum(c[2]["energy"] for c in combo)
        key = (energy, tuple((c[0], c[1]) for c in combo))
        if best is None or key < best[0]:
            best = (key, combo)
    if best is None:
        return PlacementOracleResult(False, None, math.nan, count)
    combo = best[1]
    pl = Placement.from_servers(scn, [list(c[0]) for c in combo],
                                [[list(p) for p in c[1]] for c in combo])
    return PlacementOracleResult(True, pl, best[0][0], count)


def _single(scn, u, seq, paths):
    """Delay and energy of one user's candidate, via the model functions."""
    # a throwaway placement where only user u's rows are meaningful
    N, L = scn.datacenter.num_servers, scn.datacenter.num_links
    xs, ys = [], []
    for v in scn.users:
        x = np.zeros((v.num_vnfs, N))
        y = np.zeros((v.num_vnfs - 1, L))
        if v.id == u.id:
            x[np.arange(v.num_vnfs), list(seq)] = 1.0
            for j, p in enumerate(paths):
                y[j, list(p)] = 1.0
        xs.append(x)
        ys.append(y)
    pl = Placement(tuple(xs), tuple(ys), "relaxed")
    return {"delay": core_delay(scn, pl, u.id), "energy": core_energy(scn, pl, u.id)}


# --------------------------------------------------------------------------
# power
# --------------------------------------------------------------------------

@dataclass
class PowerOracleResult:
    feasible: bool
    power: PowerAllocation | None
    objective_j: float
    r_min: np.ndarray


def _power_budgets(scn: Scenario, pl: Placement, ran_budget_s=None):
    r_min = np.zeros(scn.num_users)
    weight = np.zeros(scn.num_users)
    for u in scn.users:
        if ran_budget_s is None:
            left = (u.delay_budget_s - u.ran_constant_delay_s
                    - u.packet_size_bits / scn.backhaul.capacity_bps
                    - core_delay(scn, pl, u.id) - u.transport_delay_s)
        else:
            left = float(np.broadcast_to(ran_budget_s, (scn.num_users,))[u.id]) \
                - u.ran_constant_delay_s
        if math.isinf(left):
            continue
        if left <= 0:
            return None, None
        r_min[u.id] = u.packet_size_bits / left
        weight[u.id] = left
    return r_min, weight


def _caps_ok(scn: Scenario, pl: Placement, r_min: np.ndarray) -> bool:
    """C2, C5 and C6 only involve the aggregate rates, which sit at r_min at the optimum."""
    dc = scn.datacenter
    if _over(float(r_min.sum()), scn.backhaul.capacity_bps):
        return False
    load = np.zeros(dc.num_servers)
    link = np.zeros(dc.num_links)
    for u in scn.users:
        load += pl.x[u.id].sum(axis=0) * u.cpu_cycles_per_bit * r_min[u.id]
        if pl.y[u.id].size:
            link += pl.y[u.id].sum(axis=0) * r_min[u.id]
    return not (np.any([_over(a, b) for a, b in zip(load, dc.capacity_cycles_per_s)])
                or np.any([_over(a, b) for a, b in zip(link, dc.bandwidth_bps)]))


def brute_power(scn: Scenario, pl: Placement, points: int = 2000, refine_rounds: int = 60,
                refine_points: int = 101, ran_budget_s=None) -> PowerOracleResult:
    """Grid search of the power subproblem over the allocated (user, sub-channel) pairs.

    A ``points``-per-dimension grid on ``[0, p_max]`` gives a feasible point
    within one cell of the optimum.  It is then sharpened using the problem's
    monotone structure: rates only grow with a power and every other
    constraint is an upper bound, so for a fixed first power the cheapest
    feasible second power follows by bisection.  The resulting value
    function of the first power is convex, and ``refine_rounds`` shrinking
    grids of ``refine_points`` zoom in on its minimum.  At most two power
    variables are supported.
    """
    mask = scn.allocation_mask()
    pairs = list(zip(*np.nonzero(mask)))
    if len(pairs) > 2:
        raise ValueError("grid oracle handles at most two power variables")
    r_min, weight = _power_budgets(scn, pl, ran_budget_s)
    if r_min is None or not _caps_ok(scn, pl, r_min):
        return PowerOracleResult(False, None, math.nan, r_min)
    U, C = scn.num_users, scn.num_subchannels
    if not np.any(r_min > 0):
        return PowerOracleResult(True, PowerAllocation.zeros(scn), 0.0, r_min)
    pmax = np.array([scn.users[i].max_power_w for i, _ in pairs])
    coef = np.array([weight[i] for i, _ in pairs])
    thr = scn.interference.threshold_w

    def matrices(pts):
        P = np.zeros((pts.shape[0], U, C))
        for e, (i, k) in enumerate(pairs):
            P[:, i, k] = pts[:, e]
        return P

    def rates_ok(P):
        rates = _batch_rates(scn, P).sum(axis=2)
        return np.all(rates - r_min[None, :] >= -1e-12 * np.maximum(r_min[None, :], 1.0), axis=1)

    def caps_ok(P):
        ok = np.ones(P.shape[0], dtype=bool)
        for u in scn.users:
            ok &= ~_over_vec(P[:, u.id, :].sum(axis=1), u.max_power_w)
        interf = _batch_interference(scn, P)
        for i, k in zip(*np.nonzero(mask)):
            sigma = scn.noise[i]
            ok &= ~_over_vec(interf[:, i, k] / sigma, thr[i, k] / sigma)
        return ok

    def values(pts):
        P = matrices(pts)
        obj = pts @ coef
        obj[~(rates_ok(P) & caps_ok(P))] = np.inf
        return obj

    def cheapest_last(head):
        """Smallest feasible last coordinate for each row of ``head`` (bisection)."""
        n = head.shape[0]
        hi = np.full(n, pmax[-1])
        lo = np.zeros(n)
        top = np.column_stack([head, hi])
        reachable = rates_ok(matrices(top))
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            good = rates_ok(matrices(np.column_stack([head, mid])))
            hi = np.where(good, mid, hi)
            lo = np.where(good, lo, mid)
        pts = np.column_stack([head, hi])
        obj = pts @ coef
        obj[~(reachable & caps_ok(matrices(pts)))] = np.inf
        return pts, obj

    grids = np.meshgrid(*[np.linspace(0.0, pm, points) for pm in pmax], indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    obj = values(pts)
    k = int(np.argmin(obj))
    best, val = pts[k], float(obj[k])
    if not math.isfinite(val):
        return PowerOracleResult(False, None, math.nan, r_min)

    if len(pairs) == 1:
        cand, cval = cheapest_last(np.zeros((1, 0)))
    else:
        head = np.linspace(0.0, float(pmax[0]), points)
        cand, cval = best[None, :], np.array([val])
        for _ in range(refine_rounds):
            c_pts, c_obj = cheapest_last(head[:, None])
            j = int(np.argmin(c_obj))
            if not math.isfinite(c_obj[j]):
                break
            if c_obj[j] <= cval[0]:
                cand, cval = c_pts[j:j + 1], c_obj[j:j + 1]
            step = head[1] - head[0]
            head = np.linspace(max(0.0, head[j] - 2 * step),
                               min(float(pmax[0]), head[j] + 2 * step), refine_points)
    if float(cval[0]) <= val:
        best, val = cand[0], float(cval[0])

    P = np.zeros((U, C))
    for e, (i, k) in enumerate(pairs):
        P[i, k] = best[e]
    R = rate_matrix(scn, P, "approx") * mask
    nu = R.copy()
    for i in range(U):
        total = R[i].sum()
        if total > 0 and r_min[i] > 0:
            nu[i] *= min(1.0, r_min[i] / total)
    return PowerOracleResult(True, PowerAllocation(P, nu), float(P.sum(axis=1) @ weight), r_min)


def _over_vec(lhs, rhs):
    return lhs - rhs > FEAS_ABS_TOL + FEAS_REL_TOL * abs(rhs)


def _batch_rates(scn: Scenario, P: np.ndarray) -> np.ndarray:
    """Threshold-based rates for a batch of power matrices, shape (batch, U, C)."""
    w = scn.spectrum.subchannel_bandwidth_hz
    denom = scn.interference.threshold_w + scn.noise[:, None]
    return w * np.log2(1.0 + P * scn.direct_gain()[None] / denom[None]) * scn.allocation_mask()[None]


def _batch_interference(scn: Scenario, P: np.ndarray) -> np.ndarray:
    """Out-of-cell interference for a batch of power matrices, shape (batch, U, C)."""
    G = scn.gains.gain
    serving = scn.serving
    out = np.empty_like(P)
    for i in range(scn.num_users):
        m = serving[i]
        others = serving != m
        out[:, i, :] = np.einsum("bsk,sk->bk", P[:, others, :], G[others, m, :])
    return out
