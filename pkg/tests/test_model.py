import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from builders import (NOISE, chain_placement, datacenter, power, scenario, sfc_placement,
                      sfc_scenario, two_cell, user)
from e2eslice.errors import ConfigurationError, InfiniteDelayError, UnboundedPowerError
from e2eslice.model import (Placement, PowerAllocation, SpectrumConfig, check_feasibility,
                            constraint_slacks, core_delay, core_energy, interference_matrix,
                            inverse_rate, one_way_delay, rate, rate_approx, rate_matrix, sinr,
                            user_energy)
from e2eslice.orchestrator import total_energy

# frozen hand evaluations
TWO_CELL_SINR = 1e-13 / (1e-15 + 1e-14)   # 9.0909...
CORE_DELAY_2VNF = 1e-3 + 5e-4 + 1e-6       # 1.501 ms
CORE_ENERGY_2VNF = 2 * 1000 / 1e6 + 4 * 1000 / 2e6


class TestSinrAndRates:
    def test_zero_power_gives_zero_sinr(self):
        scn = two_cell()
        assert sinr(scn, np.zeros((2, 1)), 0, 0) == 0.0

    def test_single_cell_unit_sinr(self):
        scn = scenario([user(0)], direct=1e-10)
        p = power(scn, {(0, 0): NOISE / 1e-10})
        assert sinr(scn, p, 0, 0) == pytest.approx(1.0, rel=1e-12)

    def test_two_cell_example(self):
        scn = two_cell()
        p = power(scn, {(0, 0): 1e-3, (1, 0): 1e-3})
        assert sinr(scn, p, 0, 0) == pytest.approx(TWO_CELL_SINR, rel=1e-12)
        assert TWO_CELL_SINR == pytest.approx(9.0909, abs=1e-4)

    def test_same_cell_users_do_not_interfere(self):
        scn = scenario([user(0, subchannels=(0,)), user(1, subchannels=(1,))], num_subchannels=2)
        p = power(scn, {(0, 0): 1e-3, (1, 1): 1e-3})
        assert np.all(interference_matrix(scn, p) == 0.0)

    def test_index_errors(self):
        scn = two_cell()
        with pytest.raises(IndexError):
            sinr(scn, np.zeros((2, 1)), 5, 0)
        with pytest.raises(IndexError):
            rate(scn, np.zeros((2, 1)), 0, 3)

    @pytest.mark.parametrize("gamma, expected", [(0.0, 0.0), (1.0, 15000.0), (3.0, 30000.0)])
    def test_rate_examples(self, gamma, expected):
        scn = scenario([user(0)], direct=1e-10)
        p = power(scn, {(0, 0): gamma * NOISE / 1e-10})
        assert rate(scn, p, 0, 0) == pytest.approx(expected, rel=1e-12, abs=1e-9)

    def test_rate_approx_examples(self):
        scn = scenario([user(0)], direct=1e-10, threshold=4 * NOISE)
        assert rate_approx(scn, np.zeros((1, 1)), 0, 0) == 0.0
        p = power(scn, {(0, 0): 5 * NOISE / 1e-10})
        assert rate_approx(scn, p, 0, 0) == pytest.approx(15000.0, rel=1e-12)

    def test_rate_approx_equals_rate_without_threshold_and_interferers(self):
        scn = scenario([user(0)], direct=1e-10, threshold=0.0)
        p = power(scn, {(0, 0): 3e-4})
        assert rate_approx(scn, p, 0, 0) == pytest.approx(rate(scn, p, 0, 0), rel=1e-12)

    def test_rate_matrix_matches_scalar(self):
        scn = two_cell()
        p = power(scn, {(0, 0): 2e-3, (1, 0): 1e-3})
        R = rate_matrix(scn, p)
        assert R[0, 0] == pytest.approx(rate(scn, p, 0, 0), rel=1e-12)
        assert R[1, 0] == pytest.approx(rate(scn, p, 1, 0), rel=1e-12)


class TestInverseRate:
    def test_zero_rate(self):
        assert inverse_rate(scenario([user(0)]), 0, 0, 0.0) == 0.0

    def test_closed_form_example(self):
        scn = scenario([user(0)], direct=1e-10, threshold=0.0)
        assert inverse_rate(scn, 0, 0, 15000.0) == pytest.approx(1e-4, rel=1e-12)

    @pytest.mark.parametrize("r", [1e3, 1e4, 1e5])
    def test_round_trip(self, r):
        scn = scenario([user(0)], direct=3e-11, threshold=2 * NOISE)
        p = inverse_rate(scn, 0, 0, r)
        assert rate_approx(scn, power(scn, {(0, 0): p}), 0, 0) == pytest.approx(r, rel=1e-12)

    def test_overflow_guard(self):
        scn = scenario([user(0)])
        with pytest.raises(UnboundedPowerError):
            inverse_rate(scn, 0, 0, 61 * 15000.0)

    def test_negative_rate_rejected(self):
        with pytest.raises(ValueError):
            inverse_rate(scenario([user(0)]), 0, 0, -1.0)


class TestDelayAndEnergy:
    def test_ran_and_backhaul_delay(self):
        scn = scenario([user(0)], w_hz=1e5, direct=1e-11)
        p = power(scn, {(0, 0): 1e-3})      # sinr 1 over 1e5 Hz -> 1e5 bps
        pl = chain_placement(scn, [[0]], [[]])
        d = one_way_delay(scn, p, pl, 0)
        assert d.t_ran_s == pytest.approx(3e-3, rel=1e-12)
        assert d.t_bh_s == pytest.approx(1e-7, rel=1e-12)

    def test_core_delay_two_vnfs(self):
        scn = sfc_scenario()
        assert core_delay(scn, sfc_placement(scn), 0) == pytest.approx(CORE_DELAY_2VNF, rel=1e-12)
        assert CORE_DELAY_2VNF == pytest.approx(1.501e-3, rel=1e-12)

    def test_breakdown_sums(self):
        scn = sfc_scenario()
        p = power(scn, {(0, 0): 1e-3})
        d = one_way_delay(scn, p, sfc_placement(scn), 0)
        parts = [d.t_ran_s, d.t_bh_s, d.t_cn_s, d.t_tn_s]
        assert all(v >= 0 for v in parts)
        assert d.one_way_s == pytest.approx(sum(parts), rel=1e-12)
        assert d.e2e_s == 2 * d.one_way_s

    def test_high_rate_limit(self):
        scn = scenario([user(0)], w_hz=1e9, direct=1e-10)
        steps = [one_way_delay(scn, power(scn, {(0, 0): v}), chain_placement(scn, [[0]], [[]]),
                               0).t_ran_s for v in (1e-6, 1e-3, 1.0)]
        assert steps[0] > steps[1] > steps[2] > 2e-3
        assert steps[2] == pytest.approx(2e-3, rel=1e-5)

    def test_zero_rate_signals(self):
        scn = sfc_scenario()
        with pytest.raises(InfiniteDelayError):
            one_way_delay(scn, np.zeros((1, 1)), sfc_placement(scn), 0)
        with pytest.raises(InfiniteDelayError):
            user_energy(scn, np.zeros((1, 1)), sfc_placement(scn), 0)

    def test_energy_parts(self):
        scn = sfc_scenario()
        p = power(scn, {(0, 0): 1e-3})
        e = user_energy(scn, p, sfc_placement(scn), 0, "shannon")
        assert e.e_ran_j == pytest.approx(1e-6, rel=1e-12)
        assert e.e_cn_j == pytest.approx(CORE_ENERGY_2VNF, rel=1e-12)
        assert e.objective_j == pytest.approx(1e-6 + 4e-3, rel=1e-12)
        assert total_energy(scn, p, sfc_placement(scn), "shannon") == pytest.approx(1e-6 + 4e-3)

    def test_objective_excludes_constant_terms(self):
        scn = sfc_scenario(constant_energy_j=1.0, transport_energy_j=2.0)
        p = power(scn, {(0, 0): 1e-3})
        e = user_energy(scn, p, sfc_placement(scn), 0, "shannon")
        assert e.objective_j == pytest.approx(1e-6 + 4e-3, rel=1e-12)
        assert e.total_j == pytest.approx(1.0 + 2.0 + 1e-6 + 4e-3 + 1.0 * 100 / 1e9, rel=1e-12)

    def test_energy_term_by_term(self):
        rng = np.random.default_rng(3)
        scn = sfc_scenario()
        for _ in range(10):
            p = power(scn, {(0, 0): rng.uniform(1e-5, 1e-2)})
            pl = sfc_placement(scn)
            d = one_way_delay(scn, p, pl, 0, "approx")
            tx = d.t_ran_s - scn.users[0].ran_constant_delay_s
            dc = scn.datacenter
            proc = [10.0 * 100 / dc.capacity_cycles_per_s[n] for n in (0, 1)]
            expect = tx * p.sum() + sum(t * dc.power_per_cycle_w[n] for n, t in zip((0, 1), proc))
            assert user_energy(scn, p, pl, 0, "approx").objective_j == pytest.approx(expect, rel=1e-12)

    def test_core_energy_linear_in_server_power(self):
        scn = sfc_scenario()
        pl = sfc_placement(scn)
        doubled = scn.replace(datacenter=datacenter(powers=(4.0, 8.0)))
        assert core_energy(doubled, pl, 0) == pytest.approx(2 * core_energy(scn, pl, 0), rel=1e-15)


class TestFeasibility:
    def feasible_case(self):
        scn = sfc_scenario(delay_budget_s=10e-3)
        return scn, power(scn, {(0, 0): 1e-3}), sfc_placement(scn)

    def test_feasible_point(self):
        scn, p, pl = self.feasible_case()
        assert check_feasibility(scn, p, pl, "shannon") == []

    def test_zero_power_violates_c8(self):
        scn, _, pl = self.feasible_case()
        names = {v.constraint for v in check_feasibility(scn, np.zeros((1, 1)), pl)}
        assert names == {"C8"}

    def test_shared_server_violates_c4(self):
        scn, p, _ = self.feasible_case()
        pl = chain_placement(scn, [[0, 0]], [[[]]])
        assert "C4" in {v.constraint for v in check_feasibility(scn, p, pl)}

    def test_single_perturbation_is_reported_alone(self):
        scn, p, pl = self.feasible_case()
        too_much = scn.replace(users=(user(0, vnfs=2, delay_budget_s=10e-3, max_power_w=5e-4),))
        viol = check_feasibility(too_much, p, pl, "shannon")
        assert [v.constraint for v in viol] == ["C1"]
        assert viol[0].slack == pytest.approx(-5e-4)

    def test_broken_flow_violates_c7(self):
        scn, p, _ = self.feasible_case()
        pl = chain_placement(scn, [[0, 1]], [[[]]])
        assert {v.constraint for v in check_feasibility(scn, p, pl)} == {"C7"}

    def test_fractional_placement_flags_integrality(self):
        scn, p, pl = self.feasible_case()
        x = np.array([[0.5, 0.5], [0.5, 0.5]])
        frac = Placement((x,), (np.array([[0.0]]),))
        assert {"C10"} <= {v.constraint for v in check_feasibility(scn, p, frac)}

    def test_interference_audit(self):
        scn = scenario([user(0, bs=0), user(1, bs=1)], num_bs=2, threshold=1e-16)
        p = power(scn, {(0, 0): 1e-3, (1, 0): 1e-3})
        pl = chain_placement(scn, [[0], [1]], [[], []])
        assert "C13" in {v.constraint for v in check_feasibility(scn, p, pl, "approx")}
        assert "C13" not in {v.constraint for v in check_feasibility(scn, p, pl, "shannon")}

    def test_slacks_cover_every_family(self):
        scn, p, pl = self.feasible_case()
        slacks = constraint_slacks(scn, p, pl)
        assert {"C1", "C2", "C3", "C4", "C5", "C6", "C7", "C8", "C9", "C10", "C11"} <= set(slacks)
        assert slacks["C1"] == pytest.approx(0.1 - 1e-3)


class TestTypes:
    def test_spectrum_split_exact(self):
        s = SpectrumConfig.from_subchannel_bandwidth(15e3, 30)
        assert s.subchannel_bandwidth_hz * s.num_subchannels == s.total_bandwidth_hz

    def test_user_invariants(self):
        with pytest.raises(ConfigurationError):
            user(0, delay_budget_s=2e-3)
        with pytest.raises(ConfigurationError):
            user(0, subchannels=())

    def test_same_cell_subchannel_clash(self):
        with pytest.raises(ConfigurationError):
            scenario([user(0), user(1)])

    def test_datacenter_rejects_self_loop(self):
        with pytest.raises(ConfigurationError):
            datacenter(links=((0, 0, 1e8),))

    def test_power_on_unallocated_subchannel_is_c9(self):
        scn = scenario([user(0, subchannels=(0,))], num_subchannels=2)
        alloc = PowerAllocation(np.array([[1e-3, 1e-3]]), np.zeros((1, 2)))
        pl = chain_placement(scn, [[0]], [[]])
        assert "C9" in {v.constraint for v in check_feasibility(scn, alloc, pl)}

    def test_power_allocation_shape(self):
        with pytest.raises(ValueError):
            PowerAllocation(np.zeros((1, 2)), np.zeros((2, 1)))


# ---------------------------------------------------------------- properties

@settings(max_examples=60, deadline=None)
@given(p1=st.floats(0, 0.05), p3=st.floats(0.05, 0.1), h=st.floats(1e-12, 1e-9))
def test_rate_concave_in_power(p1, p3, h):
    scn = scenario([user(0)], direct=h)
    r = [rate(scn, power(scn, {(0, 0): v}), 0, 0) for v in (p1, 0.5 * (p1 + p3), p3)]
    assert r[1] >= 0.5 * (r[0] + r[2]) * (1 - 1e-12)
    assert r[0] <= r[1] <= r[2]


@settings(max_examples=60, deadline=None)
@given(p=st.lists(st.floats(0, 0.1), min_size=2, max_size=2),
       cross=st.floats(1e-14, 1e-11), factor=st.floats(1.0, 100.0))
def test_rate_approx_below_rate_under_threshold(p, cross, factor):
    scn = scenario([user(0, bs=0), user(1, bs=1)], num_bs=2, cross=cross)
    P = np.array([[p[0]], [p[1]]])
    interf = interference_matrix(scn, P)
    scn = scn.replace(interference=type(scn.interference)(interf * factor))
    for i in (0, 1):
        assert rate_approx(scn, P, i, 0) <= rate(scn, P, i, 0) * (1 + 1e-12) + 1e-9
