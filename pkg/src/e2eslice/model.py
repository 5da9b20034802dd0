"""Domain types and closed-form physics of the end-to-end slicing model.

All quantities are SI: watts, bits, seconds, hertz, joules.  Delay and energy
are per packet of ``D_i`` bits.  Users, base stations, sub-channels, servers
and links are indexed from 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, InfiniteDelayError, UnboundedPowerError

# inverse_rate refuses spectral efficiencies above this (2**60 ~ 1e18)
MAX_SPECTRAL_EFFICIENCY = 60.0

FEAS_ABS_TOL = 1e-9
FEAS_REL_TOL = 1e-6

RATE_MODELS = ("shannon", "approx")


@dataclass(frozen=True)
class SpectrumConfig:
    total_bandwidth_hz: float
    num_subchannels: int

    def __post_init__(self):
        if not self.total_bandwidth_hz > 0:
            raise ConfigurationError("total bandwidth must be positive")
        if int(self.num_subchannels) != self.num_subchannels or self.num_subchannels < 1:
            raise ConfigurationError("need at least one sub-channel")

    @property
    def subchannel_bandwidth_hz(self) -> float:
        return self.total_bandwidth_hz / self.num_subchannels

    @classmethod
    def from_subchannel_bandwidth(cls, w_hz: float, num_subchannels: int) -> "SpectrumConfig":
        return cls(w_hz * num_subchannels, num_subchannels)


@dataclass(frozen=True)
class BaseStation:
    id: int
    position: tuple[float, float]
    noise_power_w: float

    def __post_init__(self):
        if not self.noise_power_w > 0:
            raise ConfigurationError(f"BS {self.id}: noise power must be positive")


@dataclass(frozen=True)
class UserProfile:
    """Static description of one user: traffic, SFC, budgets and sub-channels."""

    id: int
    slice_id: int
    serving_bs: int
    packet_size_bits: float
    cpu_cycles_per_bit: float
    sfc: tuple[str, ...]
    delay_budget_s: float
    ran_constant_delay_s: float
    transport_delay_s: float
    max_power_w: float
    allocated_subchannels: tuple[int, ...]
    position: tuple[float, float] = (0.0, 0.0)
    constant_energy_j: float = 0.0
    transport_energy_j: float = 0.0

    def __post_init__(self):
        who = f"user {self.id}"
        if not self.packet_size_bits > 0:
            raise ConfigurationError(f"{who}: packet size must be positive")
        if not self.cpu_cycles_per_bit > 0:
            raise ConfigurationError(f"{who}: cpu cycles per bit must be positive")
        if len(self.sfc) < 1:
            raise ConfigurationError(f"{who}: SFC must contain at least one VNF")
        if not self.delay_budget_s > self.ran_constant_delay_s + self.transport_delay_s:
            raise ConfigurationError(
                f"{who}: delay budget must exceed constant RAN delay plus transport delay"
            )
        if not self.max_power_w > 0:
            raise ConfigurationError(f"{who}: max power must be positive")
        if len(self.allocated_subchannels) == 0:
            raise ConfigurationError(f"{who}: no sub-channels allocated")
        if len(set(self.allocated_subchannels)) != len(self.allocated_subchannels):
            raise ConfigurationError(f"{who}: duplicate sub-channels")
        if self.constant_energy_j < 0 or self.transport_energy_j < 0:
            raise ConfigurationError(f"{who}: constant energies must be non-negative")

    @property
    def num_vnfs(self) -> int:
        return len(self.sfc)


@dataclass(frozen=True, eq=False)
class ChannelGains:
    """Linear power gains indexed ``gain[user, bs, subchannel]``."""

    gain: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gain, dtype=float)
        if g.ndim != 3:
            raise ConfigurationError("channel gains must be a (users, bs, subchannels) array")
        if not (np.all(np.isfinite(g)) and np.all(g > 0)):
            raise ConfigurationError("channel gains must be positive and finite")
        g.setflags(write=False)
        object.__setattr__(self, "gain", g)

    def __eq__(self, other):
        return isinstance(other, ChannelGains) and np.array_equal(self.gain, other.gain)


@dataclass(frozen=True, eq=False)
class InterferenceBudget:
    """Per (user, sub-channel) interference threshold in watts."""

    threshold_w: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.threshold_w, dtype=float)
        if t.ndim != 2:
            raise ConfigurationError("interference thresholds must be a (users, subchannels) array")
        if not (np.all(np.isfinite(t)) and np.all(t >= 0)):
            raise ConfigurationError("interference thresholds must be finite and >= 0")
        t.setflags(write=False)
        object.__setattr__(self, "threshold_w", t)

    def __eq__(self, other):
        return isinstance(other, InterferenceBudget) and np.array_equal(
            self.threshold_w, other.threshold_w
        )


@dataclass(frozen=True)
class BackhaulConfig:
    capacity_bps: float
    bs_transmit_power_w: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.capacity_bps > 0:
            raise ConfigurationError("backhaul capacity must be positive")
        if any(p < 0 for p in self.bs_transmit_power_w):
            raise ConfigurationError("backhaul transmit power must be >= 0")


@dataclass(frozen=True, eq=False)
class DataCenterGraph:
    """Servers and directed links of the core data center."""

    capacity_cycles_per_s: np.ndarray
    power_per_cycle_w: np.ndarray
    link_src: np.ndarray
    link_dst: np.ndarray
    bandwidth_bps: np.ndarray
    _out: tuple = field(init=False, repr=False)
    _in: tuple = field(init=False, repr=False)

    def __post_init__(self):
        cap = np.asarray(self.capacity_cycles_per_s, dtype=float)
        pw = np.asarray(self.power_per_cycle_w, dtype=float)
        src = np.asarray(self.link_src, dtype=int).reshape(-1)
        dst = np.asarray(self.link_dst, dtype=int).reshape(-1)
        bw = np.asarray(self.bandwidth_bps, dtype=float).reshape(-1)
        n = cap.size
        if n < 1:
            raise ConfigurationError("data center needs at least one server")
        if pw.shape != cap.shape:
            raise ConfigurationError("one power value per server required")
        if not (np.all(cap > 0) and np.all(np.isfinite(cap))):
            raise ConfigurationError("server capacities must be positive")
        if not (np.all(pw >= 0) and np.all(np.isfinite(pw))):
            raise ConfigurationError("server power must be non-negative")
        if not (src.size == dst.size == bw.size):
            raise ConfigurationError("link arrays must have equal length")
        if not (np.all(bw > 0) and np.all(np.isfinite(bw))):
            raise ConfigurationError("link bandwidths must be positive")
        if src.size and (src.min() < 0 or dst.min() < 0 or src.max() >= n or dst.max() >= n):
            raise ConfigurationError("link endpoint out of range")
        if np.any(src == dst):
            raise ConfigurationError("self-loop links are not allowed")
        if not _weakly_connected(n, src, dst):
            raise ConfigurationError("data-center graph is not weakly connected")
        for name, arr in (("capacity_cycles_per_s", cap), ("power_per_cycle_w", pw),
                          ("link_src", src), ("link_dst", dst), ("bandwidth_bps", bw)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        out = tuple(tuple(int(l) for l in np.flatnonzero(src == v)) for v in range(n))
        inc = tuple(tuple(int(l) for l in np.flatnonzero(dst == v)) for v in range(n))
        object.__setattr__(self, "_out", out)
        object.__setattr__(self, "_in", inc)

    @property
    def num_servers(self) -> int:
        return self.capacity_cycles_per_s.size

    @property
    def num_links(self) -> int:
        return self.link_src.size

    def out_links(self, n: int) -> tuple[int, ...]:
        return self._out[n]

    def in_links(self, n: int) -> tuple[int, ...]:
        return self._in[n]

    def __eq__(self, other):
        if not isinstance(other, DataCenterGraph):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("capacity_cycles_per_s", "power_per_cycle_w", "link_src",
                      "link_dst", "bandwidth_bps")
        )


def _weakly_connected(n, src, dst):
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in zip(src.tolist(), dst.tolist()):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    return len({find(v) for v in range(n)}) == 1


@dataclass(frozen=True, eq=False)
class Scenario:
    """Immutable world description consumed by every solver."""

    spectrum: SpectrumConfig
    base_stations: tuple[BaseStation, ...]
    users: tuple[UserProfile, ...]
    gains: ChannelGains
    interference: InterferenceBudget
    backhaul: BackhaulConfig
    datacenter: DataCenterGraph
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "base_stations", tuple(self.base_stations))
        object.__setattr__(self, "users", tuple(self.users))
        U, B, C = self.num_users, len(self.base_stations), self.spectrum.num_subchannels
        if B < 1:
            raise ConfigurationError("need at least one base station")
        for idx, bs in enumerate(self.base_stations):
            if bs.id != idx:
                raise ConfigurationError("base station ids must be 0..B-1 in order")
        if self.gains.gain.shape != (U, B, C) and U > 0:
            raise ConfigurationError(
                f"channel gain shape {self.gains.gain.shape} != {(U, B, C)}"
            )
        if self.interference.threshold_w.shape != (U, C) and U > 0:
            raise ConfigurationError("interference threshold shape mismatch")
        if self.backhaul.bs_transmit_power_w and len(self.backhaul.bs_transmit_power_w) != B:
            raise ConfigurationError("one backhaul power value per base station required")
        used: dict[int, set[int]] = {}
        for idx, u in enumerate(self.users):
            if u.id != idx:
                raise ConfigurationError("user ids must be 0..U-1 in order")
            if not 0 <= u.serving_bs < B:
                raise ConfigurationError(f"user {u.id}: unknown serving BS {u.serving_bs}")
            for k in u.allocated_subchannels:
                if not 0 <= k < C:
                    raise ConfigurationError(f"user {u.id}: sub-channel {k} out of range")
            peers = used.setdefault(u.serving_bs, set())
            clash = peers.intersection(u.allocated_subchannels)
            if clash:
                raise ConfigurationError(
                    f"user {u.id}: sub-channels {sorted(clash)} already used in cell {u.serving_bs}"
                )
            peers.update(u.allocated_subchannels)

    @property
    def num_users(self) -> int:
        return len(self.users)

    @property
    def num_bs(self) -> int:
        return len(self.base_stations)

    @property
    def num_subchannels(self) -> int:
        return self.spectrum.num_subchannels

    @property
    def serving(self) -> np.ndarray:
        return np.array([u.serving_bs for u in self.users], dtype=int)

    @property
    def noise(self) -> np.ndarray:
        """Noise power at each user's serving BS."""
        return np.array([self.base_stations[u.serving_bs].noise_power_w for u in self.users])

    def allocation_mask(self) -> np.ndarray:
        mask = np.zeros((self.num_users, self.num_subchannels), dtype=bool)
        for u in self.users:
            mask[u.id, list(u.allocated_subchannels)] = True
        return mask

    def direct_gain(self) -> np.ndarray:
        """``h[i, b_i, k]`` as a (users, subchannels) array."""
        if self.num_users == 0:
            return np.zeros((0, self.num_subchannels))
        return self.gains.gain[np.arange(self.num_users), self.serving, :]

    def bs_backhaul_power(self, bs: int) -> float:
        if self.backhaul.bs_transmit_power_w:
            return float(self.backhaul.bs_transmit_power_w[bs])
        return 0.0

    def replace(self, **changes) -> "Scenario":
        fields = dict(
            spectrum=self.spectrum, base_stations=self.base_stations, users=self.users,
            gains=self.gains, interference=self.interference, backhaul=self.backhaul,
            datacenter=self.datacenter, metadata=dict(self.metadata),
        )
        fields.update(changes)
        return Scenario(**fields)

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return (
            self.spectrum == other.spectrum
            and self.base_stations == other.base_stations
            and self.users == other.users
            and self.gains == other.gains
            and self.interference == other.interference
            and self.backhaul == other.backhaul
            and self.datacenter == other.datacenter
            and self.metadata == other.metadata
        )


@dataclass(frozen=True, eq=False)
class PowerAllocation:
    """Transmit powers ``p[i, k]`` (W) and auxiliary rates ``nu[i, k]`` (bps).

    Shapes and finiteness are checked here; budget constraints are left to
    :func:`check_feasibility` so that hand-edited allocations can be audited.
    """

    p: np.ndarray
    nu: np.ndarray | None = None

    def __post_init__(self):
        p = np.array(self.p, dtype=float)
        nu = np.zeros_like(p) if self.nu is None else np.array(self.nu, dtype=float)
        if p.ndim != 2 or nu.shape != p.shape:
            raise ValueError("power and rate arrays must share a (users, subchannels) shape")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(nu))):
            raise ValueError("power allocation must be finite")
        p.setflags(write=False)
        nu.setflags(write=False)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "nu", nu)

    @classmethod
    def zeros(cls, scn: Scenario) -> "PowerAllocation":
        shape = (scn.num_users, scn.num_subchannels)
        return cls(np.zeros(shape), np.zeros(shape))

    def total_power(self) -> np.ndarray:
        return self.p.sum(axis=1)

    def __eq__(self, other):
        return (isinstance(other, PowerAllocation) and np.array_equal(self.p, other.p)
                and np.array_equal(self.nu, other.nu))


@dataclass(frozen=True, eq=False)
class Placement:
    """Server assignment ``x[i][j, n]`` and link assignment ``y[i][j, l]``.

    ``y[i]`` has one row per consecutive VNF pair (``J_i - 1`` rows).
    """

    x: tuple[np.ndarray, ...]
    y: tuple[np.ndarray, ...]
    mode: str = "relaxed"

    def __post_init__(self):
        if self.mode not in ("relaxed", "binary"):
            raise ValueError("mode must be 'relaxed' or 'binary'")
        xs = tuple(np.array(a, dtype=float) for a in self.x)
        ys = tuple(np.array(a, dtype=float) for a in self.y)
        if len(xs) != len(ys):
            raise ValueError("x and y must cover the same users")
        for xi, yi in zip(xs, ys):
            if xi.ndim != 2 or yi.ndim != 2 or yi.shape[0] != max(xi.shape[0] - 1, 0):
                raise ValueError("x must be (J, servers) and y (J - 1, links) per user")
        for a in xs + ys:
            if np.any(a < -1e-9) or np.any(a > 1 + 1e-9) or not np.all(np.isfinite(a)):
                raise ValueError("placement values must lie in [0, 1]")
            if self.mode == "binary" and not np.all((a == 0) | (a == 1)):
                raise ValueError("binary placement has non-integral entries")
            a.setflags(write=False)
        object.__setattr__(self, "x", xs)
        object.__setattr__(self, "y", ys)

    @classmethod
    def from_servers(cls, scn: Scenario, servers: Sequence[Sequence[int]],
                     paths: Sequence[Sequence[Sequence[int]]]) -> "Placement":
        """Binary placement from per-user server lists and per-stage link paths."""
        N, L = scn.datacenter.num_servers, scn.datacenter.num_links
        xs, ys = [], []
        for u, srv, pth in zip(scn.users, servers, paths):
            x = np.zeros((u.num_vnfs, N))
            if len(srv) != u.num_vnfs:
                raise ValueError(f"user {u.id}: expected {u.num_vnfs} servers, got {len(srv)}")
            for j, n in enumerate(srv):
                x[j, n] = 1.0
            y = np.zeros((u.num_vnfs - 1, L))
            if len(pth) != u.num_vnfs - 1:
                raise ValueError(f"user {u.id}: expected {u.num_vnfs - 1} paths")
            for j, links in enumerate(pth):
                for l in links:
                    y[j, l] = 1.0
            xs.append(x)
            ys.append(y)
        return cls(tuple(xs), tuple(ys), "binary")

    @property
    def num_users(self) -> int:
        return len(self.x)

    def servers(self, i: int) -> list[int]:
        """Hosting server of each VNF of user ``i`` (argmax for relaxed placements)."""
        return [int(np.argmax(row)) for row in self.x[i]]

    def links(self, i: int, j: int) -> list[int]:
        """Links carrying stage ``j -> j+1`` of user ``i`` (y = 1 entries)."""
        return [int(l) for l in np.flatnonzero(self.y[i][j] > 0.5)]

    def max_fractionality(self) -> float:
        m = 0.0
        for a in self.x + self.y:
            if a.size:
                m = max(m, float(np.max(np.minimum(a, 1.0 - a))))
        return m

    def flat(self) -> np.ndarray:
        parts = [a.ravel() for a in self.x] + [a.ravel() for a in self.y]
        return np.concatenate(parts) if parts else np.zeros(0)

    def __eq__(self, other):
        if not isinstance(other, Placement) or len(self.x) != len(other.x):
            return NotImplemented if not isinstance(other, Placement) else False
        return self.mode == other.mode and all(
            np.array_equal(a, b) for a, b in zip(self.x + self.y, other.x + other.y)
        )


@dataclass(frozen=True)
class DelayBreakdown:
    t_ran_s: float
    t_bh_s: float
    t_cn_s: float
    t_tn_s: float

    @property
    def one_way_s(self) -> float:
        return self.t_ran_s + self.t_bh_s + self.t_cn_s + self.t_tn_s

    @property
    def e2e_s(self) -> float:
        return 2.0 * self.one_way_s


@dataclass(frozen=True)
class EnergyBreakdown:
    """Per-packet energy of one user.

    ``objective_j`` is the optimized part: the variable RAN term plus the core
    term.  Constant RAN energy, backhaul and transport energy are reported
    only.
    """

    e_ran_j: float
    e_bh_j: float
    e_cn_j: float
    e_tn_j: float
    objective_j: float

    @property
    def total_j(self) -> float:
        return self.e_ran_j + self.e_bh_j + self.e_cn_j + self.e_tn_j


@dataclass(frozen=True)
class Violation:
    constraint: str
    entity: str
    slack: float

    def __str__(self):
        return f"{self.constraint} [{self.entity}] slack={self.slack:.6g}"


# --------------------------------------------------------------------------
# Rates
# --------------------------------------------------------------------------

def _power_matrix(p) -> np.ndarray:
    return p.p if isinstance(p, PowerAllocation) else np.asarray(p, dtype=float)


def _check_index(scn: Scenario, i: int, k: int):
    if not 0 <= i < scn.num_users:
        raise IndexError(f"user index {i} out of range")
    if not 0 <= k < scn.num_subchannels:
        raise IndexError(f"sub-channel index {k} out of range")


def interference_matrix(scn: Scenario, p) -> np.ndarray:
    """Out-of-cell interference at each user's serving BS, shape (users, subchannels)."""
    P = _power_matrix(p)
    U = scn.num_users
    if U == 0:
        return np.zeros((0, scn.num_subchannels))
    b = scn.serving
    G = scn.gains.gain
    # received[s, m, k] = p_s^k h_{s,m}^k
    received = P[:, None, :] * G
    per_bs = np.zeros((scn.num_bs, scn.num_subchannels))
    for m in range(scn.num_bs):
        per_bs[m] = received[b != m, m, :].sum(axis=0)
    return per_bs[b]


def sinr_matrix(scn: Scenario, p) -> np.ndarray:
    P = _power_matrix(p)
    signal = P * scn.direct_gain()
    return signal / (interference_matrix(scn, P) + scn.noise[:, None])


def sinr(scn: Scenario, p, i: int, k: int) -> float:
    """Uplink SINR of user ``i`` on sub-channel ``k``; same-cell users do not interfere."""
    _check_index(scn, i, k)
    P = _power_matrix(p)
    u = scn.users[i]
    b = u.serving_bs
    G = scn.gains.gain
    interf = 0.0
    for s in scn.users:
        if s.serving_bs != b:
            interf += P[s.id, k] * G[s.id, b, k]
    noise = scn.base_stations[b].noise_power_w
    return float(P[i, k] * G[i, b, k] / (interf + noise))


def rate(scn: Scenario, p, i: int, k: int) -> float:
    """Shannon rate ``w log2(1 + sinr)`` in bps."""
    g = sinr(scn, p, i, k)
    return float(scn.spectrum.subchannel_bandwidth_hz * math.log2(1.0 + g))


def rate_approx(scn: Scenario, p, i: int, k: int) -> float:
    """Rate with the interference replaced by its threshold ``I_i^{k,th}``."""
    _check_index(scn, i, k)
    P = _power_matrix(p)
    u = scn.users[i]
    h = scn.gains.gain[i, u.serving_bs, k]
    denom = scn.interference.threshold_w[i, k] + scn.base_stations[u.serving_bs].noise_power_w
    return float(scn.spectrum.subchannel_bandwidth_hz * math.log2(1.0 + P[i, k] * h / denom))


def rate_matrix(scn: Scenario, p, rate_model: str = "shannon") -> np.ndarray:
    P = _power_matrix(p)
    w = scn.spectrum.subchannel_bandwidth_hz
    if rate_model == "shannon":
        return w * np.log2(1.0 + sinr_matrix(scn, P))
    if rate_model == "approx":
        denom = scn.interference.threshold_w + scn.noise[:, None]
        return w * np.log2(1.0 + P * scn.direct_gain() / denom)
    raise ValueError(f"unknown rate model {rate_model!r}")


def noise_plus_threshold(scn: Scenario) -> np.ndarray:
    """``I_i^{k,th} + sigma^2_{b_i}`` as a (users, subchannels) array."""
    return scn.interference.threshold_w + scn.noise[:, None]


def inverse_rate(scn: Scenario, i: int, k: int, r: float) -> float:
    """Power that makes :func:`rate_approx` equal ``r`` on sub-channel ``k``."""
    _check_index(scn, i, k)
    if r < 0:
        raise ValueError("target rate must be non-negative")
    w = scn.spectrum.subchannel_bandwidth_hz
    se = r / w
    if se > MAX_SPECTRAL_EFFICIENCY:
        raise UnboundedPowerError(
            f"user {i}, sub-channel {k}: {r:.4g} bps needs {se:.1f} b/s/Hz"
        )
    u = scn.users[i]
    denom = scn.interference.threshold_w[i, k] + scn.base_stations[u.serving_bs].noise_power_w
    return float(math.expm1(se * math.log(2.0)) * denom / scn.gains.gain[i, u.serving_bs, k])


# --------------------------------------------------------------------------
# Delay and energy
# --------------------------------------------------------------------------

def core_delay(scn: Scenario, pl: Placement, i: int) -> float:
    """Processing plus inter-server link delay of user ``i``'s SFC."""
    u = scn.users[i]
    dc = scn.datacenter
    D = u.packet_size_bits
    t = float(np.sum(pl.x[i] @ (u.cpu_cycles_per_bit * D / dc.capacity_cycles_per_s)))
    if pl.y[i].size:
        t += float(np.sum(pl.y[i] @ (D / dc.bandwidth_bps)))
    return t


def core_energy(scn: Scenario, pl: Placement, i: int) -> float:
    u = scn.users[i]
    dc = scn.datacenter
    coef = dc.power_per_cycle_w * u.cpu_cycles_per_bit * u.packet_size_bits / dc.capacity_cycles_per_s
    return float(np.sum(pl.x[i] @ coef))


def _total_rate(scn, p, i, rate_model):
    return float(rate_matrix(scn, p, rate_model)[i].sum())


def one_way_delay(scn: Scenario, p, pl: Placement, i: int,
                  rate_model: str = "shannon") -> DelayBreakdown:
    """Per-packet one-way delay of user ``i`` split into RAN, backhaul, core, transport."""
    u = scn.users[i]
    total = _total_rate(scn, p, i, rate_model)
    if not total > 0:
        raise InfiniteDelayError(f"user {i}: zero aggregate rate")
    return DelayBreakdown(
        t_ran_s=u.ran_constant_delay_s + u.packet_size_bits / total,
        t_bh_s=u.packet_size_bits / scn.backhaul.capacity_bps,
        t_cn_s=core_delay(scn, pl, i),
        t_tn_s=u.transport_delay_s,
    )


def user_energy(scn: Scenario, p, pl: Placement, i: int,
                rate_model: str = "shannon") -> EnergyBreakdown:
    """Per-packet energy of user ``i``; raises on zero aggregate rate."""
    u = scn.users[i]
    P = _power_matrix(p)
    total = _total_rate(scn, P, i, rate_model)
    if not total > 0:
        raise InfiniteDelayError(f"user {i}: zero aggregate rate, energy undefined")
    ran_var = float(P[i].sum()) * u.packet_size_bits / total
    e_cn = core_energy(scn, pl, i)
    e_bh = scn.bs_backhaul_power(u.serving_bs) * u.packet_size_bits / scn.backhaul.capacity_bps
    return EnergyBreakdown(
        e_ran_j=ran_var + u.constant_energy_j,
        e_bh_j=e_bh,
        e_cn_j=e_cn,
        e_tn_j=u.transport_energy_j,
        objective_j=ran_var + e_cn,
    )


# --------------------------------------------------------------------------
# Feasibility
# --------------------------------------------------------------------------

def _exceeds(lhs, rhs, abs_tol=FEAS_ABS_TOL, rel_tol=FEAS_REL_TOL):
    return lhs - rhs > abs_tol + rel_tol * abs(rhs)


def check_feasibility(scn: Scenario, p, pl: Placement, rate_model: str = "approx",
                      abs_tol: float = FEAS_ABS_TOL,
                      rel_tol: float = FEAS_REL_TOL) -> list[Violation]:
    """Evaluate constraints C1-C11 of the joint problem; empty list iff feasible.

    With ``rate_model="approx"`` every rate-dependent constraint uses the
    threshold-based rate and the realized out-of-cell interference is audited
    against its threshold (reported as ``C13``).  ``"shannon"`` evaluates the
    literal Shannon rates and skips the audit.
    """
    return [v for v, bad in _evaluate(scn, p, pl, rate_model, abs_tol, rel_tol) if bad]


def constraint_slacks(scn: Scenario, p, pl: Placement, rate_model: str = "approx",
                      abs_tol: float = FEAS_ABS_TOL,
                      rel_tol: float = FEAS_REL_TOL) -> dict[str, float]:
    """Smallest slack per constraint family, satisfied or not.

    Inequalities report ``rhs - lhs``; equalities and integrality report minus
    the absolute deviation, so 0 is the best possible value for them.
    """
    worst: dict[str, float] = {}
    for v, _ in _evaluate(scn, p, pl, rate_model, abs_tol, rel_tol):
        worst[v.constraint] = min(worst.get(v.constraint, math.inf), v.slack)
    return worst


def _evaluate(scn, p, pl, rate_model, abs_tol, rel_tol) -> list[tuple[Violation, bool]]:
    P = _power_matrix(p)
    out: list[tuple[Violation, bool]] = []
    tol = abs_tol + rel_tol

    def flag(name, entity, lhs, rhs):
        out.append((Violation(name, entity, float(rhs - lhs)),
                    _exceeds(lhs, rhs, abs_tol, rel_tol)))

    def dev(name, entity, d, limit=tol):
        out.append((Violation(name, entity, -float(d)), d > limit))

    U = scn.num_users
    dc = scn.datacenter
    N, L = dc.num_servers, dc.num_links
    if P.shape != (U, scn.num_subchannels):
        raise ValueError("power matrix shape does not match scenario")
    if pl.num_users != U:
        raise ValueError("placement does not match scenario users")
    mask = scn.allocation_mask()
    R = rate_matrix(scn, P, rate_model) * mask
    total_rate = R.sum(axis=1)

    for u in scn.users:
        flag("C1", f"user {u.id}", float(P[u.id].sum()), u.max_power_w)
    flag("C2", "backhaul", float(total_rate.sum()), scn.backhaul.capacity_bps)

    load = np.zeros(N)
    link_load = np.zeros(L)
    for u in scn.users:
        i = u.id
        x, y = pl.x[i], pl.y[i]
        if x.shape != (u.num_vnfs, N) or y.shape != (u.num_vnfs - 1, L):
            raise ValueError(f"user {i}: placement shape mismatch")
        for j in range(u.num_vnfs):
            dev("C3", f"user {i} vnf {j}", abs(float(x[j].sum()) - 1.0))
        per_server = x.sum(axis=0)
        top = int(np.argmax(per_server)) if N else -1
        for n in range(N):
            if n == top or per_server[n] > 1.0 + tol:
                out.append((Violation("C4", f"user {i} server {n}", float(1.0 - per_server[n])),
                            bool(per_server[n] > 1.0 + tol)))
        load += per_server * u.cpu_cycles_per_bit * total_rate[i]
        if y.size:
            link_load += y.sum(axis=0) * total_rate[i]
        for j in range(u.num_vnfs - 1):
            for n in range(N):
                net = float(y[j, list(dc.out_links(n))].sum() - y[j, list(dc.in_links(n))].sum())
                target = float(x[j, n] - x[j + 1, n])
                dev("C7", f"user {i} stage {j} server {n}", abs(net - target))
    for n in range(N):
        flag("C5", f"server {n}", float(load[n]), float(dc.capacity_cycles_per_s[n]))
    for l in range(L):
        flag("C6", f"link {l}", float(link_load[l]), float(dc.bandwidth_bps[l]))

    for u in scn.users:
        i = u.id
        if not total_rate[i] > 0:
            out.append((Violation("C8", f"user {i}", -math.inf), True))
            continue
        t = (u.ran_constant_delay_s + u.packet_size_bits / total_rate[i]
             + u.packet_size_bits / scn.backhaul.capacity_bps
             + core_delay(scn, pl, i) + u.transport_delay_s)
        flag("C8", f"user {i}", t, u.delay_budget_s)

    low = np.unravel_index(int(np.argmin(P)), P.shape) if P.size else None
    for i, k in zip(*np.nonzero(P < -abs_tol)):
        out.append((Violation("C9", f"user {int(i)} subchannel {int(k)}", float(P[i, k])), True))
    if low is not None and not P[low] < -abs_tol:
        out.append((Violation("C9", f"user {int(low[0])} subchannel {int(low[1])}",
                              min(float(P[low]), 0.0)), False))
    for i, k in zip(*np.nonzero(~mask)):
        dev("C9", f"user {int(i)} subchannel {int(k)} not allocated", abs(float(P[i, k])), abs_tol)

    for name, arrays in (("C10", pl.x), ("C11", pl.y)):
        for i, a in enumerate(arrays):
            if a.size:
                frac = np.minimum(np.abs(a), np.abs(1.0 - a))
                dev(name, f"user {i}", float(frac.max()), abs_tol)

    if rate_model == "approx" and U:
        interf = interference_matrix(scn, P)
        thr = scn.interference.threshold_w
        noise = scn.noise
        for i, k in zip(*np.nonzero(mask)):
            # compared in units of the victim's noise power: watts are far below abs_tol
            bad = _exceeds(interf[i, k] / noise[i], thr[i, k] / noise[i], abs_tol, rel_tol)
            out.append((Violation("C13", f"user {int(i)} subchannel {int(k)}",
                                  float(thr[i, k] - interf[i, k])), bad))
    return out


def feasibility_summary(violations: Sequence[Violation]) -> dict[str, float]:
    """Worst slack per constraint family."""
    worst: dict[str, float] = {}
    for v in violations:
        worst[v.constraint] = min(worst.get(v.constraint, math.inf), v.slack)
    return worst
