"""End-to-end runs: the joint alternating algorithm and the disjoint baseline.

All energies, delays and the final audit use the threshold-based rate
(interference replaced by its threshold) together with a check that the
realized out-of-cell interference stays below that threshold, which is the
setting in which the power subproblem is exact.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import placement as plc
from . import power as pwr
from .errors import InfeasibleBudgetError, InitializationError, PathError, RoundingInfeasibleError
from .model import (Placement, PowerAllocation, Scenario, Violation, check_feasibility,
                    feasibility_summary, user_energy)

log = logging.getLogger(__name__)

CONVERGED = "converged"
ITERATION_LIMIT = "iteration-limit"
INFEASIBLE = "infeasible"
RATE_MODEL = "approx"


@dataclass(frozen=True)
class JpslaConfig:
    t_max: int = 20
    epsilon: float = 1e-4
    taylor_cap: int = 30
    power_tol: float = pwr.DEFAULT_TOL
    taylor_tol: float = 1e-9

    def __post_init__(self):
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.taylor_cap < 1:
            raise ValueError("taylor_cap must be >= 1")


@dataclass
class IterationRecord:
    t: int
    power_objective: float
    placement_objective: float
    energy_j: float
    feasible: bool
    taylor_passes: int = 0
    final_fractionality: float = 0.0
    mm_descent: bool = True
    power_descent: bool | None = None
    placement_descent: bool = True
    kept_previous_placement: bool = False
    power: PowerAllocation | None = field(default=None, repr=False)
    placement: Placement | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "t": self.t, "power_objective_j": self.power_objective,
            "placement_objective_j": self.placement_objective, "energy_j": self.energy_j,
            "feasible": self.feasible, "taylor_passes": self.taylor_passes,
            "final_fractionality": self.final_fractionality, "mm_descent": self.mm_descent,
            "power_descent": self.power_descent, "placement_descent": self.placement_descent,
            "kept_previous_placement": self.kept_previous_placement,
        }


@dataclass
class SolveReport:
    method: str
    status: str
    iterations: list[IterationRecord] = field(default_factory=list)
    best_iteration: int | None = None
    energy_j: float = math.nan
    warning: str = ""
    message: str = ""
    family: str = ""
    violations: list[Violation] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.status != INFEASIBLE

    @property
    def energies(self) -> list[float]:
        return [r.energy_j for r in self.iterations]

    def to_dict(self) -> dict:
        return {
            "method": self.method, "status": self.status, "energy_j": self.energy_j,
            "best_iteration": self.best_iteration, "warning": self.warning,
            "message": self.message, "family": self.family,
            "violations": [str(v) for v in self.violations],
            "iterations": [r.to_dict() for r in self.iterations],
        }


def total_energy(scn: Scenario, p, pl: Placement, rate_model: str = RATE_MODEL) -> float:
    """Sum of the per-user optimized energy; raises on a zero-rate user."""
    return float(sum(user_energy(scn, p, pl, u.id, rate_model).objective_j for u in scn.users))


def _audit(scn, alloc, pl) -> list[Violation]:
    return check_feasibility(scn, alloc, pl, rate_model=RATE_MODEL)


def _family(violations) -> str:
    worst = feasibility_summary(violations)
    return min(worst, key=worst.get) if worst else ""


def _placement_step(scn, rates, core_budget, previous, cfg):
    """Taylor iterations plus extraction, never worse than ``previous`` if that fits."""
    sub = plc.PlacementSubproblem(scn, rates, core_budget, cap=cfg.taylor_cap)
    res = plc.taylor_iterate(sub, tol=cfg.taylor_tol)
    candidate = None
    if res.placement is not None:
        try:
            candidate = plc.extract_binary(res.placement, sub)
        except (RoundingInfeasibleError, PathError) as exc:
            log.debug("extraction failed: %s", exc)
    keep = previous is not None and not plc.violations(sub, previous)
    if keep and (candidate is None or
                 plc.core_energy_total(sub, previous) <= plc.core_energy_total(sub, candidate)):
        return previous, res, True, sub
    return candidate, res, False, sub


def run_jpsla(scn: Scenario, cfg: JpslaConfig | None = None):
    """Alternate power control and placement; returns ``(power, placement, report)``."""
    cfg = cfg or JpslaConfig()
    report = SolveReport("jpsla", ITERATION_LIMIT)
    try:
        pl = plc.initialize(scn)
    except InitializationError as exc:
        report.status, report.message, report.family = INFEASIBLE, str(exc), "C5"
        return None, None, report
    best = None
    prev_alloc, prev_energy = None, None
    for t in range(1, cfg.t_max + 1):
        try:
            sub = pwr.build(scn, pl)
            alloc, st = pwr.solve_power(sub, tol=cfg.power_tol)
        except InfeasibleBudgetError as exc:
            alloc, st = None, None
            reason, family = str(exc), "C8"
        if alloc is None:
            if st is not None:
                reason, family = st.message, st.info.get("family", "")
            if best is None:
                report.status, report.message, report.family = INFEASIBLE, reason, family
                return None, None, report
            report.warning = f"iteration {t}: {reason}; returning best previous iterate"
            break
        power_descent = None
        if prev_alloc is not None and pwr.is_feasible(sub, prev_alloc):
            power_descent = st.objective <= pwr.objective_value(sub, prev_alloc) * (1 + 1e-6)

        rates = alloc.nu.sum(axis=1)
        ps = plc.PlacementSubproblem.from_rates(scn, rates, cap=cfg.taylor_cap)
        new_pl, res, kept, ps = _placement_step(scn, rates, ps.core_budget_s, pl, cfg)
        if new_pl is None:
            if best is None:
                report.status, report.family = INFEASIBLE, "C8"
                report.message = res.message or "placement step found no binary placement"
                return None, None, report
            report.warning = f"iteration {t}: placement step failed; returning best iterate"
            break
        energy = total_energy(scn, alloc, new_pl)
        viol = _audit(scn, alloc, new_pl)
        rec = IterationRecord(
            t=t, power_objective=st.objective,
            placement_objective=plc.core_energy_total(ps, new_pl), energy_j=energy,
            feasible=not viol, taylor_passes=res.passes,
            final_fractionality=res.placement.max_fractionality() if res.placement else math.nan,
            mm_descent=res.descent_ok(), power_descent=power_descent,
            placement_descent=plc.core_energy_total(ps, new_pl)
            <= plc.core_energy_total(ps, pl) * (1 + 1e-12) + 1e-300,
            kept_previous_placement=kept, power=alloc, placement=new_pl)
        report.iterations.append(rec)
        if not viol and (best is None or energy < best.energy_j):
            best = rec
        pl, prev_alloc = new_pl, alloc
        if prev_energy is not None and abs(energy - prev_energy) <= cfg.epsilon * abs(prev_energy):
            report.status = CONVERGED
            break
        prev_energy = energy
    return _finish(scn, report, best)


def _finish(scn, report, best):
    if best is None:
        last = report.iterations[-1] if report.iterations else None
        report.status = INFEASIBLE
        if last is not None:
            report.violations = _audit(scn, last.power, last.placement)
            report.family = _family(report.violations)
            report.message = "no iterate passed the feasibility audit"
        return None, None, report
    report.best_iteration = best.t
    report.energy_j = best.energy_j
    report.violations = _audit(scn, best.power, best.placement)
    if report.violations:
        report.status = INFEASIBLE
        report.family = _family(report.violations)
    return best.power, best.placement, report


def run_ds(scn: Scenario, cfg: JpslaConfig | None = None):
    """Disjoint baseline: half of each delay budget for the RAN, half for the core."""
    cfg = cfg or JpslaConfig()
    report = SolveReport("ds", ITERATION_LIMIT)
    try:
        pl0 = plc.initialize(scn)
    except InitializationError as exc:
        report.status, report.message, report.family = INFEASIBLE, str(exc), "C5"
        return None, None, report
    half = np.array([u.delay_budget_s / 2.0 for u in scn.users])
    try:
        sub = pwr.build(scn, pl0, ran_budget_s=half)
        alloc, st = pwr.solve_power(sub, tol=cfg.power_tol)
    except InfeasibleBudgetError as exc:
        report.status, report.message, report.family = INFEASIBLE, str(exc), "C8"
        return None, None, report
    if alloc is None:
        report.status, report.message = INFEASIBLE, st.message
        report.family = st.info.get("family", "")
        return None, None, report
    core_budget = np.array([half[u.id] - u.packet_size_bits / scn.backhaul.capacity_bps
                            - u.transport_delay_s for u in scn.users])
    rates = alloc.nu.sum(axis=1)
    new_pl, res, kept, ps = _placement_step(scn, rates, core_budget, pl0, cfg)
    if new_pl is None:
        report.status, report.family = INFEASIBLE, "C8"
        report.message = res.message or "placement stage found no binary placement"
        return None, None, report
    energy = total_energy(scn, alloc, new_pl)
    viol = _audit(scn, alloc, new_pl)
    rec = IterationRecord(
        t=1, power_objective=st.objective,
        placement_objective=plc.core_energy_total(ps, new_pl), energy_j=energy,
        feasible=not viol, taylor_passes=res.passes,
        final_fractionality=res.placement.max_fractionality() if res.placement else math.nan,
        mm_descent=res.descent_ok(), kept_previous_placement=kept,
        power=alloc, placement=new_pl)
    report.iterations.append(rec)
    report.status = CONVERGED
    return _finish(scn, report, rec if not viol else None)
