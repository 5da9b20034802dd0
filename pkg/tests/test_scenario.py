import math
import re

import numpy as np
import pytest

from e2eslice import scenario as sc
from e2eslice.errors import ConfigurationError, ScenarioValidationError


@pytest.fixture(scope="module")
def default_scn():
    return sc.generate(sc.ScenarioSpec(seed=7))


def test_generation_is_deterministic():
    a = sc.generate(sc.ScenarioSpec(seed=11))
    b = sc.generate(sc.ScenarioSpec(seed=11))
    assert a == b
    assert np.array_equal(a.gains.gain, b.gains.gain)
    assert a != sc.generate(sc.ScenarioSpec(seed=12))


def test_default_constants(default_scn):
    scn = default_scn
    assert scn.spectrum.subchannel_bandwidth_hz == 15e3
    assert scn.num_bs == 2 and scn.num_users == 12 and scn.num_subchannels == 30
    assert scn.datacenter.num_servers == 20
    assert scn.backhaul.capacity_bps == 1e9
    for u in scn.users:
        assert u.max_power_w == 0.1
        assert u.packet_size_bits == 100
        assert u.ran_constant_delay_s == 2e-3
        assert u.transport_delay_s == 1e-3
        assert u.delay_budget_s == (5e-3, 10e-3, 15e-3)[u.slice_id]
    assert all(bs.noise_power_w == 1e-14 for bs in scn.base_stations)
    assert sc.ScenarioSpec().pathloss_exponent == 3.0


def test_parameter_ranges(default_scn):
    dc = default_scn.datacenter
    assert np.all((dc.capacity_cycles_per_s >= 10e6) & (dc.capacity_cycles_per_s <= 50e6))
    assert np.all((dc.bandwidth_bps >= 100e6) & (dc.bandwidth_bps <= 500e6))
    assert np.all((dc.power_per_cycle_w >= 1) & (dc.power_per_cycle_w <= 10))
    assert np.all(default_scn.interference.threshold_w == 10 * 1e-14)


def test_nearest_bs_association(default_scn):
    for u in default_scn.users:
        d = [math.dist(u.position, bs.position) for bs in default_scn.base_stations]
        assert u.serving_bs == int(np.argmin(d))


def test_subchannel_blocks_disjoint_in_cell(default_scn):
    for m in range(default_scn.num_bs):
        used = [k for u in default_scn.users if u.serving_bs == m for k in u.allocated_subchannels]
        assert len(used) == len(set(used))
        assert set(used) <= set(range(default_scn.num_subchannels))


def test_cells_reuse_all_subchannels(default_scn):
    for m in range(default_scn.num_bs):
        used = {k for u in default_scn.users if u.serving_bs == m for k in u.allocated_subchannels}
        assert used == set(range(default_scn.num_subchannels))


def test_split_examples():
    assert sc.split_subchannels([0, 0], 4) == [[0, 1], [2, 3]]
    assert [len(b) for b in sc.split_subchannels([0, 0, 0], 4)] == [2, 1, 1]
    assert sc.split_subchannels([0, 1], 3) == [[0, 1, 2], [0, 1, 2]]
    with pytest.raises(ConfigurationError):
        sc.split_subchannels([0, 0, 0], 2)


def test_assign_subchannels_is_idempotent(default_scn):
    assert sc.assign_subchannels(default_scn) == default_scn


def test_too_many_users_per_cell():
    with pytest.raises(ConfigurationError):
        sc.generate(sc.ScenarioSpec(num_subchannels=2, users_per_slice=4))


def test_fading_mean_is_one():
    spec = sc.ScenarioSpec(seed=3, num_subchannels=5000)
    scn = sc.generate(spec)
    mu = []
    for u in scn.users:
        for m, bs in enumerate(scn.base_stations):
            d = max(math.dist(u.position, bs.position), spec.min_distance_m)
            mu.append(scn.gains.gain[u.id, m] * d ** spec.pathloss_exponent)
    mu = np.concatenate(mu)
    assert mu.size >= 100_000
    assert np.all(scn.gains.gain > 0)
    assert abs(mu.mean() - 1.0) < 0.05


def test_fading_of_a_subchannel_does_not_depend_on_count():
    a = sc.generate(sc.ScenarioSpec(seed=5, num_subchannels=30))
    b = sc.generate(sc.ScenarioSpec(seed=5, num_subchannels=40))
    assert np.array_equal(a.gains.gain, b.gains.gain[:, :, :30])


def test_distance_gain_monotonicity():
    spec = sc.ScenarioSpec(seed=2)
    scn = sc.generate(spec)
    u = scn.users[0]
    d = max(math.dist(u.position, scn.base_stations[0].position), spec.min_distance_m)
    mu = scn.gains.gain[0, 0] * d ** spec.pathloss_exponent
    doubled = mu * (2 * d) ** (-spec.pathloss_exponent)
    assert np.allclose(scn.gains.gain[0, 0] / doubled, 2 ** spec.pathloss_exponent, rtol=1e-12)


def test_servers_are_stable_when_adding_servers():
    a = sc.generate(sc.ScenarioSpec(seed=9, server_count=10)).datacenter
    b = sc.generate(sc.ScenarioSpec(seed=9, server_count=20)).datacenter
    assert np.array_equal(a.capacity_cycles_per_s, b.capacity_cycles_per_s[:10])
    assert np.array_equal(a.power_per_cycle_w, b.power_per_cycle_w[:10])


def test_datacenter_connected_without_self_loops(default_scn):
    dc = default_scn.datacenter
    assert not np.any(dc.link_src == dc.link_dst)
    for a in range(dc.num_servers):
        assert (a, (a + 1) % dc.num_servers) in set(zip(dc.link_src.tolist(), dc.link_dst.tolist()))


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        sc.ScenarioSpec(num_bs=0)
    with pytest.raises(ConfigurationError):
        sc.ScenarioSpec(server_capacity_range=(5.0, 1.0))


# ---------------------------------------------------------------- files

def test_round_trip(tmp_path, default_scn):
    path = tmp_path / "s.yaml"
    sc.save(default_scn, path)
    assert sc.load(path) == default_scn


def test_generator_only_file():
    text = "format: e2eslice-scenario/1\ngenerator:\n  seed: 4\n  num_subchannels: 30\n"
    assert sc.loads(text) == sc.generate(sc.ScenarioSpec(seed=4))


def test_missing_delay_budget_names_user(default_scn):
    text = sc.dumps(default_scn)
    lines = text.splitlines()
    idx = [k for k, ln in enumerate(lines) if ln.strip().startswith("delay_budget_s:")]
    del lines[idx[1]]
    with pytest.raises(ScenarioValidationError) as err:
        sc.loads("\n".join(lines))
    assert re.search(r"user \d+: missing required field 'delay_budget_s'", str(err.value))
    assert err.value.line is not None


def test_negative_pathloss_rejected():
    with pytest.raises(ScenarioValidationError) as err:
        sc.loads("generator:\n  pathloss_exponent: -1.0\n")
    assert err.value.line == 2


def test_malformed_yaml():
    with pytest.raises(ScenarioValidationError):
        sc.loads("users: [unclosed\n")
