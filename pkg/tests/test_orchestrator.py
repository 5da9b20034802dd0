import math

import numpy as np
import pytest

from builders import chain_placement, datacenter, power, scenario, user
from e2eslice import scenario as sc
from e2eslice.model import check_feasibility
from e2eslice.orchestrator import (CONVERGED, INFEASIBLE, ITERATION_LIMIT, JpslaConfig,
                                   run_ds, run_jpsla, total_energy)

BIG_DC = datacenter(caps=(1e7, 2e7), powers=(2.0, 4.0))


@pytest.fixture(scope="module")
def default_run():
    scn = sc.generate(sc.ScenarioSpec(seed=1))
    return scn, run_jpsla(scn)


def test_config_validation():
    with pytest.raises(ValueError):
        JpslaConfig(t_max=0)
    with pytest.raises(ValueError):
        JpslaConfig(epsilon=0.0)


def test_single_iteration_limit():
    scn = scenario([user(0)], dc=BIG_DC)
    _, _, rep = run_jpsla(scn, JpslaConfig(t_max=1))
    assert len(rep.iterations) == 1
    assert rep.status == ITERATION_LIMIT
    assert rep.best_iteration == 1


def test_uniquely_feasible_placement_is_a_fixed_point():
    # server 0 cannot host the VNF, so the initial placement is the only one
    scn = scenario([user(0)], dc=datacenter(caps=(1e3, 2e7)))
    p, pl, rep = run_jpsla(scn)
    assert rep.status == CONVERGED
    assert len(rep.iterations) == 2
    assert all(r.placement == pl for r in rep.iterations)
    assert pl.servers(0) == [1]
    assert rep.iterations[0].energy_j == rep.iterations[1].energy_j


def test_ds_stage_one_rate():
    scn = scenario([user(0)], w_hz=1e5, dc=BIG_DC)
    p, pl, rep = run_ds(scn)
    assert rep.status == CONVERGED
    assert p.nu.sum() == pytest.approx(100 / 5e-4, rel=1e-6)
    assert p.nu.sum() == pytest.approx(2e5, rel=1e-6)


def test_ds_infeasible_when_ran_constant_uses_half_budget():
    scn = scenario([user(0, ran_constant_delay_s=2.5e-3, transport_delay_s=0.5e-3)], dc=BIG_DC)
    _, _, ds = run_ds(scn)
    assert ds.status == INFEASIBLE and ds.family == "C8"
    p, pl, jp = run_jpsla(scn)
    assert jp.feasible and not check_feasibility(scn, p, pl)


def test_infeasible_scenario_reports_family():
    scn = scenario([user(0, max_power_w=1e-9)], dc=BIG_DC)
    p, pl, rep = run_jpsla(scn)
    assert p is None and rep.status == INFEASIBLE and rep.family == "C1"


def test_total_energy_composition():
    scn = scenario([user(0)], w_hz=1e5, direct=1e-11)
    pl = chain_placement(scn, [[1]], [[]])
    p = power(scn, {(0, 0): 1e-3})
    core = 4.0 * 10 * 100 / 2e6       # p~ C_i D_i / C_n on server 1
    ran = total_energy(scn, p, pl) - core
    assert ran > 0
    doubled = scn.replace(datacenter=datacenter(powers=(4.0, 8.0)))
    assert total_energy(doubled, p, pl) - ran == pytest.approx(2 * core, rel=1e-12)


def test_empty_user_set():
    scn = sc.generate(sc.ScenarioSpec(seed=0)).replace(users=())
    assert total_energy(scn, np.zeros((0, scn.num_subchannels)), None) == 0.0


def test_default_scenario_converges(default_run):
    scn, (p, pl, rep) = default_run
    assert rep.status == CONVERGED
    assert len(rep.iterations) <= 20
    assert not check_feasibility(scn, p, pl)


def test_recorded_energy_matches_recomputation(default_run):
    scn, (_, _, rep) = default_run
    for rec in rep.iterations:
        assert rec.energy_j == pytest.approx(total_energy(scn, rec.power, rec.placement),
                                             rel=1e-9)
    assert rep.energy_j == min(r.energy_j for r in rep.iterations if r.feasible)


def test_block_descent_audit(default_run):
    _, (_, _, rep) = default_run
    for rec in rep.iterations:
        assert rec.placement_descent
        assert rec.power_descent in (None, True)
        assert rec.mm_descent


def test_deterministic():
    scn = sc.generate(sc.ScenarioSpec(seed=4, users_per_slice=2))
    a = run_jpsla(scn)[2].to_dict()
    b = run_jpsla(scn)[2].to_dict()
    assert a == b


def test_report_round_trips_to_plain_data(default_run):
    _, (_, _, rep) = default_run
    d = rep.to_dict()
    assert d["method"] == "jpsla" and d["status"] == CONVERGED
    assert len(d["iterations"]) == len(rep.iterations)
    assert all(not math.isnan(it["energy_j"]) for it in d["iterations"])
