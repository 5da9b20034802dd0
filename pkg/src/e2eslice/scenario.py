"""Randomized scenario generation, fixed sub-channel split, and scenario files.

Scenario files are YAML.  Every quantity carries its unit in the key name
(``_w``, ``_bps``, ``_s``, ``_hz``, ``_m``).  A file may hold a fully
materialized scenario, a ``generator`` block only (the scenario is then
generated from it), or both (the generator block is kept as provenance).

Randomness is split into independent streams keyed by entity (user, server,
server row), so that enlarging one dimension of a spec leaves the draws of
the existing entities untouched.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigurationError, ScenarioValidationError
from .model import (BackhaulConfig, BaseStation, ChannelGains, DataCenterGraph,
                    InterferenceBudget, Scenario, SpectrumConfig, UserProfile)

FORMAT = "e2eslice-scenario/1"

# stream tags for SeedSequence spawn keys
_USER, _FADING, _SERVER, _LINK_ROW, _BW_ROW, _BACKBONE = range(6)


@dataclass(frozen=True)
class ScenarioSpec:
    """Parameters of a randomized multi-cell snapshot."""

    num_bs: int = 2
    area_m: float = 500.0
    num_slices: int = 3
    users_per_slice: int = 4
    num_subchannels: int = 30
    seed: int = 0
    pathloss_exponent: float = 3.0
    server_count: int = 20
    link_density: float = 0.3
    server_capacity_range: tuple[float, float] = (10e6, 50e6)
    link_bandwidth_range: tuple[float, float] = (100e6, 500e6)
    server_power_range: tuple[float, float] = (1.0, 10.0)
    delay_budgets_s: tuple[float, ...] = (5e-3, 10e-3, 15e-3)
    subchannel_bandwidth_hz: float = 15e3
    max_power_w: float = 0.1
    noise_power_w: float = 1e-14
    packet_size_bits: float = 100.0
    backhaul_capacity_bps: float = 1e9
    ran_constant_delay_s: float = 2e-3
    transport_delay_s: float = 1e-3
    cycles_per_bit: float = 1e-4
    sfc_length_range: tuple[int, int] = (2, 3)
    interference_threshold_factor: float = 10.0
    bs_backhaul_power_w: float = 1.0
    constant_energy_j: float = 0.0
    transport_energy_j: float = 0.0
    min_distance_m: float = 10.0

    def __post_init__(self):
        for name in ("num_bs", "num_slices", "users_per_slice", "num_subchannels", "server_count"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigurationError(f"{name} must be an integer >= 1")
        for name in ("area_m", "subchannel_bandwidth_hz", "max_power_w", "noise_power_w",
                     "packet_size_bits", "backhaul_capacity_bps", "cycles_per_bit"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if not self.pathloss_exponent >= 0:
            raise ConfigurationError("pathloss_exponent must be >= 0")
        if not 0 <= self.link_density <= 1:
            raise ConfigurationError("link_density must lie in [0, 1]")
        for name in ("server_capacity_range", "link_bandwidth_range", "server_power_range",
                     "sfc_length_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ConfigurationError(f"{name}: min must not exceed max")
            if lo <= 0 and name != "server_power_range":
                raise ConfigurationError(f"{name}: values must be positive")
        if self.server_power_range[0] < 0:
            raise ConfigurationError("server_power_range must be non-negative")
        if len(self.delay_budgets_s) != self.num_slices:
            raise ConfigurationError("one delay budget per slice required")
        if self.sfc_length_range[1] > self.server_count:
            raise ConfigurationError("SFCs longer than the server count cannot satisfy C4")
        for g, t in enumerate(self.delay_budgets_s):
            if not t > self.ran_constant_delay_s + self.transport_delay_s:
                raise ConfigurationError(f"slice {g}: delay budget below constant delays")
        if self.interference_threshold_factor < 0 or self.min_distance_m < 0:
            raise ConfigurationError("threshold factor and min distance must be >= 0")
        if self.users_per_cell_max() > self.num_subchannels:
            raise ConfigurationError(
                f"{self.users_per_cell_max()} users in a cell but only "
                f"{self.num_subchannels} sub-channels"
            )

    @property
    def num_users(self) -> int:
        return self.num_slices * self.users_per_slice

    def users_per_cell_max(self) -> int:
        counts = [0] * self.num_bs
        for g in range(self.num_slices):
            for u in range(self.users_per_slice):
                counts[u % self.num_bs] += 1
        return max(counts)

    def replace(self, **changes) -> "ScenarioSpec":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def bs_positions(spec: ScenarioSpec) -> list[tuple[float, float]]:
    """Base stations at the centres of equal vertical strips of the square area."""
    width = spec.area_m / spec.num_bs
    return [((m + 0.5) * width, spec.area_m / 2.0) for m in range(spec.num_bs)]


def generate(spec: ScenarioSpec) -> Scenario:
    """Draw one snapshot; deterministic for a given spec (including its seed)."""
    bs_pos = bs_positions(spec)
    stations = tuple(BaseStation(m, pos, spec.noise_power_w) for m, pos in enumerate(bs_pos))
    width = spec.area_m / spec.num_bs
    U, B, C = spec.num_users, spec.num_bs, spec.num_subchannels

    positions, cells, slices, sfc_len = [], [], [], []
    for g in range(spec.num_slices):
        for local in range(spec.users_per_slice):
            i = len(positions)
            rng = _rng(spec.seed, _USER, g, local)
            cell = local % B
            while True:
                x = (cell + rng.random()) * width
                y = rng.random() * spec.area_m
                if math.dist((x, y), bs_pos[cell]) >= spec.min_distance_m:
                    break
            positions.append((float(x), float(y)))
            cells.append(cell)
            slices.append(g)
            lo, hi = spec.sfc_length_range
            sfc_len.append(int(rng.integers(lo, hi + 1)))

    gain = np.zeros((U, B, C))
    for i in range(U):
        g, local = slices[i], i - slices[i] * spec.users_per_slice
        # (C, B) draw keeps the fading of sub-channel k independent of C
        mu = _rng(spec.seed, _FADING, g, local).exponential(1.0, size=(C, B)).T
        for m in range(B):
            d = max(math.dist(positions[i], bs_pos[m]), spec.min_distance_m)
            gain[i, m] = mu[m] * d ** (-spec.pathloss_exponent)

    serving = [int(np.argmin([math.dist(positions[i], p) for p in bs_pos])) for i in range(U)]
    blocks = split_subchannels(serving, C)

    users = []
    for i in range(U):
        users.append(UserProfile(
            id=i, slice_id=slices[i], serving_bs=serving[i],
            packet_size_bits=spec.packet_size_bits, cpu_cycles_per_bit=spec.cycles_per_bit,
            sfc=tuple(f"vnf{j}" for j in range(sfc_len[i])),
            delay_budget_s=spec.delay_budgets_s[slices[i]],
            ran_constant_delay_s=spec.ran_constant_delay_s,
            transport_delay_s=spec.transport_delay_s,
            max_power_w=spec.max_power_w,
            allocated_subchannels=tuple(blocks[i]),
            position=positions[i],
            constant_energy_j=spec.constant_energy_j,
            transport_energy_j=spec.transport_energy_j,
        ))

    thr = np.full((U, C), spec.interference_threshold_factor * spec.noise_power_w)
    return Scenario(
        spectrum=SpectrumConfig.from_subchannel_bandwidth(spec.subchannel_bandwidth_hz, C),
        base_stations=stations,
        users=tuple(users),
        gains=ChannelGains(gain),
        interference=InterferenceBudget(thr),
        backhaul=BackhaulConfig(spec.backhaul_capacity_bps, (spec.bs_backhaul_power_w,) * B),
        datacenter=generate_datacenter(spec),
        metadata={"generator": spec.to_dict()},
    )


def generate_datacenter(spec: ScenarioSpec) -> DataCenterGraph:
    """Random directed graph: a Hamiltonian cycle plus each ordered pair w.p. ``link_density``."""
    N = spec.server_count
    cap = np.empty(N)
    pw = np.empty(N)
    for n in range(N):
        rng = _rng(spec.seed, _SERVER, n)
        cap[n] = rng.uniform(*spec.server_capacity_range)
        pw[n] = rng.uniform(*spec.server_power_range)
    links: dict[tuple[int, int], float] = {}
    for a in range(N):
        # row-keyed streams: the first N entries of a row do not depend on N
        present = _rng(spec.seed, _LINK_ROW, a).random(max(N, 1))
        bw = _rng(spec.seed, _BW_ROW, a).uniform(*spec.link_bandwidth_range, size=max(N, 1))
        for b in range(N):
            if a != b and present[b] < spec.link_density:
                links[(a, b)] = float(bw[b])
    if N > 1:
        bb = _rng(spec.seed, _BACKBONE, 0)
        for a in range(N):
            b = (a + 1) % N
            draw = float(bb.uniform(*spec.link_bandwidth_range))
            links.setdefault((a, b), draw)
    pairs = sorted(links)
    return DataCenterGraph(
        capacity_cycles_per_s=cap,
        power_per_cycle_w=pw,
        link_src=np.array([a for a, _ in pairs], dtype=int),
        link_dst=np.array([b for _, b in pairs], dtype=int),
        bandwidth_bps=np.array([links[p] for p in pairs]),
    )


def split_subchannels(serving, num_subchannels: int) -> list[list[int]]:
    """Contiguous equal blocks per cell, remainder one-per-user in id order."""
    out: list[list[int]] = [[] for _ in serving]
    for cell in sorted(set(serving)):
        members = [i for i, b in enumerate(serving) if b == cell]
        n = len(members)
        if n > num_subchannels:
            raise ConfigurationError(
                f"cell {cell}: {n} users but only {num_subchannels} sub-channels"
            )
        base, extra = divmod(num_subchannels, n)
        start = 0
        for rank, i in enumerate(members):
            size = base + (1 if rank < extra else 0)
            out[i] = list(range(start, start + size))
            start += size
    return out


def assign_subchannels(scn: Scenario) -> Scenario:
    """Re-run the equal split on ``scn`` (full frequency reuse across cells)."""
    blocks = split_subchannels([u.serving_bs for u in scn.users], scn.num_subchannels)
    users = tuple(dataclasses.replace(u, allocated_subchannels=tuple(b))
                  for u, b in zip(scn.users, blocks))
    return scn.replace(users=users)


# --------------------------------------------------------------------------
# Files
# --------------------------------------------------------------------------

def to_dict(scn: Scenario) -> dict:
    dc = scn.datacenter
    data = {"format": FORMAT}
    if "generator" in scn.metadata:
        data["generator"] = scn.metadata["generator"]
    data["spectrum"] = {
        "total_bandwidth_hz": float(scn.spectrum.total_bandwidth_hz),
        "num_subchannels": int(scn.spectrum.num_subchannels),
    }
    data["backhaul"] = {
        "capacity_bps": float(scn.backhaul.capacity_bps),
        "bs_transmit_power_w": [float(v) for v in scn.backhaul.bs_transmit_power_w],
    }
    data["base_stations"] = [
        {"id": bs.id, "position_m": [float(v) for v in bs.position],
         "noise_power_w": float(bs.noise_power_w)}
        for bs in scn.base_stations
    ]
    data["users"] = [
        {
            "id": u.id, "slice_id": u.slice_id, "serving_bs": u.serving_bs,
            "position_m": [float(v) for v in u.position],
            "packet_size_bits": float(u.packet_size_bits),
            "cpu_cycles_per_bit": float(u.cpu_cycles_per_bit),
            "sfc": list(u.sfc),
            "delay_budget_s": float(u.delay_budget_s),
            "ran_constant_delay_s": float(u.ran_constant_delay_s),
            "transport_delay_s": float(u.transport_delay_s),
            "max_power_w": float(u.max_power_w),
            "allocated_subchannels": [int(k) for k in u.allocated_subchannels],
            "constant_energy_j": float(u.constant_energy_j),
            "transport_energy_j": float(u.transport_energy_j),
        }
        for u in scn.users
    ]
    data["channel_gains"] = [[[float(v) for v in row] for row in per_user]
                             for per_user in scn.gains.gain]
    data["interference_threshold_w"] = [[float(v) for v in row]
                                        for row in scn.interference.threshold_w]
    data["datacenter"] = {
        "servers": [
            {"id": n, "capacity_cycles_per_s": float(dc.capacity_cycles_per_s[n]),
             "power_per_cycle_w": float(dc.power_per_cycle_w[n])}
            for n in range(dc.num_servers)
        ],
        "links": [
            {"id": l, "src": int(dc.link_src[l]), "dst": int(dc.link_dst[l]),
             "bandwidth_bps": float(dc.bandwidth_bps[l])}
            for l in range(dc.num_links)
        ],
    }
    return data


def dumps(scn: Scenario) -> str:
    return yaml.safe_dump(to_dict(scn), sort_keys=False, default_flow_style=None, width=100)


def save(scn: Scenario, path) -> None:
    Path(path).write_text(dumps(scn))


def load(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioValidationError(f"cannot read scenario file: {exc}", path=str(path)) from exc
    return loads(text, source=str(path))


def loads(text: str, source: str | None = None) -> Scenario:
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioValidationError(f"malformed YAML: {getattr(exc, 'problem', exc)}",
                                      line=mark.line + 1 if mark else None, path=source) from exc
    if root is None:
        raise ScenarioValidationError("empty scenario file", path=source)
    return _Reader(source).scenario(_Node(root, "", source))


class _Node:
    """Thin wrapper over a composed YAML node that reports line-precise errors."""

    def __init__(self, node, where, source):
        self.node = node
        self.where = where
        self.source = source

    @property
    def line(self):
        return self.node.start_mark.line + 1

    def fail(self, msg):
        raise ScenarioValidationError(f"{self.where or 'document'}: {msg}",
                                      line=self.line, path=self.source)

    def mapping(self) -> dict[str, "_Node"]:
        if not isinstance(self.node, yaml.MappingNode):
            self.fail("expected a mapping")
        out = {}
        for k, v in self.node.value:
            key = k.value
            out[key] = _Node(v, f"{self.where}.{key}" if self.where else key, self.source)
        return out

    def seq(self) -> list["_Node"]:
        if not isinstance(self.node, yaml.SequenceNode):
            self.fail("expected a list")
        return [_Node(v, f"{self.where}[{i}]", self.source) for i, v in enumerate(self.node.value)]

    def scalar(self) -> str:
        if not isinstance(self.node, yaml.ScalarNode):
            self.fail("expected a scalar")
        return self.node.value

    def number(self, minimum=None, strict=False) -> float:
        raw = self.scalar()
        try:
            v = float(raw)
        except ValueError:
            self.fail(f"expected a number, got {raw!r}")
        if not math.isfinite(v):
            self.fail("value must be finite")
        if minimum is not None and (v < minimum or (strict and v == minimum)):
            self.fail(f"value {v} must be {'>' if strict else '>='} {minimum}")
        return v

    def integer(self, minimum=None) -> int:
        v = self.number(minimum)
        if v != int(v):
            self.fail(f"expected an integer, got {v}")
        return int(v)

    def numbers(self, minimum=None, strict=False) -> list[float]:
        return [n.number(minimum, strict) for n in self.seq()]

    def text(self) -> str:
        return self.scalar()


def _req(m: dict, key: str, parent: _Node, who: str | None = None) -> _Node:
    if key not in m:
        who = who or parent.where or "document"
        parent.fail(f"{who}: missing required field '{key}'")
    return m[key]


class _Reader:
    def __init__(self, source):
        self.source = source

    def scenario(self, root: _Node) -> Scenario:
        top = root.mapping()
        if "format" in top and top["format"].text() != FORMAT:
            top["format"].fail(f"unsupported format {top['format'].text()!r}")
        spec = self.spec(top["generator"]) if "generator" in top else None
        if "users" not in top:
            if spec is None:
                root.fail("file has neither 'users' nor a 'generator' block")
            return generate(spec)

        sp_ = _req(top, "spectrum", root).mapping()
        spectrum_node = top["spectrum"]
        try:
            spectrum = SpectrumConfig(
                _req(sp_, "total_bandwidth_hz", spectrum_node).number(0, strict=True),
                _req(sp_, "num_subchannels", spectrum_node).integer(1),
            )
        except ConfigurationError as exc:
            spectrum_node.fail(str(exc))

        bss = []
        for n in _req(top, "base_stations", root).seq():
            m = n.mapping()
            pos = _req(m, "position_m", n).numbers()
            if len(pos) != 2:
                m["position_m"].fail("position must have two coordinates")
            bss.append(BaseStation(_req(m, "id", n).integer(0), tuple(pos),
                                   _req(m, "noise_power_w", n).number(0, strict=True)))
        B, C = len(bss), spectrum.num_subchannels

        users = []
        for n in _req(top, "users", root).seq():
            m = n.mapping()
            uid = _req(m, "id", n).integer(0)
            who = f"user {uid}"
            f = {key: _req(m, key, n, who) for key in (
                "slice_id", "serving_bs", "packet_size_bits", "cpu_cycles_per_bit", "sfc",
                "delay_budget_s", "ran_constant_delay_s", "transport_delay_s", "max_power_w",
                "allocated_subchannels")}
            pos = m["position_m"].numbers() if "position_m" in m else [0.0, 0.0]
            sfc = [s.text() for s in f["sfc"].seq()]
            try:
                users.append(UserProfile(
                    id=uid, slice_id=f["slice_id"].integer(0),
                    serving_bs=f["serving_bs"].integer(0),
                    packet_size_bits=f["packet_size_bits"].number(0, strict=True),
                    cpu_cycles_per_bit=f["cpu_cycles_per_bit"].number(0, strict=True),
                    sfc=tuple(sfc),
                    delay_budget_s=f["delay_budget_s"].number(0, strict=True),
                    ran_constant_delay_s=f["ran_constant_delay_s"].number(0),
                    transport_delay_s=f["transport_delay_s"].number(0),
                    max_power_w=f["max_power_w"].number(0, strict=True),
                    allocated_subchannels=tuple(s.integer(0) for s in f["allocated_subchannels"].seq()),
                    position=tuple(pos),
                    constant_energy_j=m["constant_energy_j"].number(0) if "constant_energy_j" in m else 0.0,
                    transport_energy_j=m["transport_energy_j"].number(0) if "transport_energy_j" in m else 0.0,
                ))
            except ConfigurationError as exc:
                n.fail(str(exc))
        U = len(users)

        gains_node = _req(top, "channel_gains", root)
        gain = np.zeros((U, B, C))
        rows = gains_node.seq()
        if len(rows) != U:
            gains_node.fail(f"expected {U} users, got {len(rows)}")
        for i, per_user in enumerate(rows):
            per_bs = per_user.seq()
            if len(per_bs) != B:
                per_user.fail(f"expected {B} base stations")
            for mm, row in enumerate(per_bs):
                vals = row.numbers(0, strict=True)
                if len(vals) != C:
                    row.fail(f"expected {C} sub-channel gains")
                gain[i, mm] = vals

        noise = np.array([bss[u.serving_bs].noise_power_w if u.serving_bs < B else 1.0
                          for u in users])
        if "interference_threshold_w" in top:
            tn = top["interference_threshold_w"]
            rows = tn.seq()
            if len(rows) != U:
                tn.fail(f"expected {U} rows")
            thr = np.array([r.numbers(0) for r in rows]).reshape(U, C) if U else np.zeros((0, C))
            for r in rows:
                if len(r.seq()) != C:
                    r.fail(f"expected {C} thresholds")
        else:
            factor = spec.interference_threshold_factor if spec else 10.0
            thr = np.repeat(factor * noise[:, None], C, axis=1)

        bh = _req(top, "backhaul", root)
        bhm = bh.mapping()
        backhaul = BackhaulConfig(
            _req(bhm, "capacity_bps", bh).number(0, strict=True),
            tuple(bhm["bs_transmit_power_w"].numbers(0)) if "bs_transmit_power_w" in bhm else (),
        )

        dcn = _req(top, "datacenter", root)
        dcm = dcn.mapping()
        servers = _req(dcm, "servers", dcn).seq()
        cap, pw = [], []
        for idx, s in enumerate(servers):
            m = s.mapping()
            if _req(m, "id", s).integer(0) != idx:
                m["id"].fail("server ids must be 0..N-1 in order")
            cap.append(_req(m, "capacity_cycles_per_s", s).number(0, strict=True))
            pw.append(_req(m, "power_per_cycle_w", s).number(0))
        src, dst, bw = [], [], []
        for idx, ln in enumerate(_req(dcm, "links", dcn).seq()):
            m = ln.mapping()
            if _req(m, "id", ln).integer(0) != idx:
                m["id"].fail("link ids must be 0..L-1 in order")
            src.append(_req(m, "src", ln).integer(0))
            dst.append(_req(m, "dst", ln).integer(0))
            bw.append(_req(m, "bandwidth_bps", ln).number(0, strict=True))
        try:
            dc = DataCenterGraph(np.array(cap), np.array(pw), np.array(src, dtype=int),
                                 np.array(dst, dtype=int), np.array(bw))
            metadata = {"generator": spec.to_dict()} if spec is not None else {}
            return Scenario(spectrum, tuple(bss), tuple(users), ChannelGains(gain),
                            InterferenceBudget(thr), backhaul, dc, metadata)
        except ConfigurationError as exc:
            root.fail(str(exc))

    def spec(self, node: _Node) -> ScenarioSpec:
        m = node.mapping()
        kwargs = {}
        fields = {f.name: f for f in dataclasses.fields(ScenarioSpec)}
        defaults = ScenarioSpec()
        for key, val in m.items():
            if key not in fields:
                val.fail(f"unknown generator field '{key}'")
            default = getattr(defaults, key)
            if isinstance(default, tuple):
                nums = val.numbers()
                if isinstance(default[0], int):
                    nums = [int(v) for v in nums]
                kwargs[key] = tuple(nums)
            elif isinstance(default, int) and not isinstance(default, bool):
                kwargs[key] = val.integer()
            else:
                kwargs[key] = val.number()
        if "pathloss_exponent" in m and kwargs["pathloss_exponent"] < 0:
            m["pathloss_exponent"].fail("pathloss exponent must be >= 0")
        try:
            return ScenarioSpec(**kwargs)
        except ConfigurationError as exc:
            node.fail(str(exc))
