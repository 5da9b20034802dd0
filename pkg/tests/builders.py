"""Hand-built scenarios shared by the unit tests."""

import numpy as np

from e2eslice.model import (BackhaulConfig, BaseStation, ChannelGains, DataCenterGraph,
                            InterferenceBudget, Placement, Scenario, SpectrumConfig, UserProfile)

NOISE = 1e-14


def user(i, bs=0, subchannels=(0,), vnfs=1, **kw):
    fields = dict(id=i, slice_id=0, serving_bs=bs, packet_size_bits=100.0,
                  cpu_cycles_per_bit=10.0, sfc=tuple(f"f{j}" for j in range(vnfs)),
                  delay_budget_s=5e-3, ran_constant_delay_s=2e-3, transport_delay_s=1e-3,
                  max_power_w=0.1, allocated_subchannels=tuple(subchannels))
    fields.update(kw)
    return UserProfile(**fields)


def datacenter(caps=(1e6, 2e6), powers=(2.0, 4.0), links=((0, 1, 1e8),)):
    links = list(links)
    return DataCenterGraph(
        capacity_cycles_per_s=np.array(caps, float), power_per_cycle_w=np.array(powers, float),
        link_src=np.array([a for a, _, _ in links], dtype=int),
        link_dst=np.array([b for _, b, _ in links], dtype=int),
        bandwidth_bps=np.array([w for _, _, w in links], float))


def scenario(users, num_bs=1, num_subchannels=1, w_hz=15e3, gain=None, direct=1e-10,
             cross=1e-12, threshold=0.0, dc=None, backhaul_bps=1e9, noise=NOISE):
    """Scenario with ``direct`` gain to the serving BS and ``cross`` to every other BS."""
    users = tuple(users)
    U, B, C = len(users), num_bs, num_subchannels
    if gain is None:
        gain = np.full((U, B, C), cross)
        for u in users:
            gain[u.id, u.serving_bs, :] = direct
    thr = np.broadcast_to(np.asarray(threshold, float), (U, C)).copy()
    return Scenario(
        spectrum=SpectrumConfig.from_subchannel_bandwidth(w_hz, C),
        base_stations=tuple(BaseStation(m, (100.0 * m, 0.0), noise) for m in range(B)),
        users=users, gains=ChannelGains(np.asarray(gain, float)),
        interference=InterferenceBudget(thr),
        backhaul=BackhaulConfig(backhaul_bps, (1.0,) * B),
        datacenter=dc if dc is not None else datacenter())


def chain_placement(scn, servers_per_user, paths_per_user):
    return Placement.from_servers(scn, servers_per_user, paths_per_user)


def power(scn, entries):
    """Power matrix from ``{(i, k): watts}``."""
    P = np.zeros((scn.num_users, scn.num_subchannels))
    for (i, k), v in entries.items():
        P[i, k] = v
    return P


def two_cell():
    users = [user(0, bs=0), user(1, bs=1)]
    gain = np.array([[[1e-10], [1e-12]], [[1e-12], [1e-10]]])
    return scenario(users, num_bs=2, gain=gain)


def sfc_scenario(**kw):
    """One user, 2-VNF SFC, C_i D_i = 1000 cycles, servers (1e6, 2e6), one 1e8 bps link."""
    u = user(0, vnfs=2, **kw)
    return scenario([u], w_hz=1e5, direct=1e-11)


def sfc_placement(scn):
    return chain_placement(scn, [[0, 1]], [[[0]]])
