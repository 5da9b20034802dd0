"""Command line entry point: ``e2eslice {run-figure,solve,validate,generate-scenario}``.

Exit codes: 0 success, 1 infeasible or violated constraints, 2 usage or
input errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import experiments as exp
from . import scenario as scen
from .errors import ScenarioValidationError
from .model import (Placement, PowerAllocation, Scenario, check_feasibility, constraint_slacks,
                    one_way_delay, user_energy)
from .orchestrator import RATE_MODEL, JpslaConfig, run_ds, run_jpsla

SOLUTION_FORMAT = "e2eslice-solution/1"
EXIT_OK, EXIT_INFEASIBLE, EXIT_USAGE = 0, 1, 2


class InputError(Exception):
    pass


def _config(args) -> JpslaConfig:
    return JpslaConfig(t_max=args.t_max, epsilon=args.epsilon, taylor_cap=args.taylor_cap,
                       power_tol=args.power_tol, taylor_tol=args.taylor_tol)


def _add_solver_flags(p):
    d = JpslaConfig()
    p.add_argument("--t-max", type=int, default=d.t_max, help="outer iteration limit")
    p.add_argument("--epsilon", type=float, default=d.epsilon,
                   help="relative energy change that counts as converged")
    p.add_argument("--taylor-cap", type=int, default=d.taylor_cap, help="Taylor pass cap")
    p.add_argument("--power-tol", type=float, default=d.power_tol, help="power solver tolerance")
    p.add_argument("--taylor-tol", type=float, default=d.taylor_tol,
                   help="Taylor stall tolerance")


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="e2eslice", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run-figure", help="sweep snapshots for one figure setup")
    p.add_argument("figure", choices=sorted(exp.FIGURES))
    p.add_argument("--values", type=_int_list, help="sweep values (default: figure preset)")
    p.add_argument("--snapshots", type=int, default=50)
    p.add_argument("--methods", default="jpsla,ds")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--independent-draws", action="store_true",
                   help="draw fresh scenarios at every sweep value instead of reusing them")
    p.add_argument("--out", default="results", help="output directory")
    p.add_argument("--workers", type=int, help=f"worker processes (default ${exp.WORKERS_ENV} or 1)")
    _add_solver_flags(p)

    p = sub.add_parser("solve", help="solve one scenario file")
    p.add_argument("scenario")
    p.add_argument("--method", choices=("jpsla", "ds"), default="jpsla")
    p.add_argument("--out", help="solution JSON path (default: stdout)")
    _add_solver_flags(p)

    p = sub.add_parser("validate", help="check a solution against every constraint")
    p.add_argument("scenario")
    p.add_argument("solution")

    p = sub.add_parser("generate-scenario", help="draw one random snapshot")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--subchannels", type=int, default=scen.ScenarioSpec.num_subchannels)
    p.add_argument("--servers", type=int, default=scen.ScenarioSpec.server_count)
    p.add_argument("--users-per-slice", type=int, default=scen.ScenarioSpec.users_per_slice)
    p.add_argument("--bs", type=int, default=scen.ScenarioSpec.num_bs)
    p.add_argument("-o", "--out", help="YAML path (default: stdout)")
    return ap


# --------------------------------------------------------------------------
# solution files
# --------------------------------------------------------------------------

def solution_dict(scn: Scenario, alloc: PowerAllocation | None, pl: Placement | None,
                  report) -> dict:
    out = {"format": SOLUTION_FORMAT, "method": report.method, "status": report.status,
           "energy_j": None if math.isnan(report.energy_j) else report.energy_j,
           "report": report.to_dict()}
    if alloc is None or pl is None:
        return out
    users = []
    for u in scn.users:
        i = u.id
        d = one_way_delay(scn, alloc, pl, i, RATE_MODEL)
        e = user_energy(scn, alloc, pl, i, RATE_MODEL)
        users.append({
            "id": i,
            "servers": pl.servers(i),
            "paths": [pl.links(i, j) for j in range(u.num_vnfs - 1)],
            "power_w": alloc.p[i].tolist(),
            "rate_bps": alloc.nu[i].tolist(),
            "delay_s": {"ran": d.t_ran_s, "backhaul": d.t_bh_s, "core": d.t_cn_s,
                        "transport": d.t_tn_s, "one_way": d.one_way_s, "e2e": d.e2e_s},
            "energy_j": {"ran": e.e_ran_j, "backhaul": e.e_bh_j, "core": e.e_cn_j,
                         "transport": e.e_tn_j, "objective": e.objective_j},
        })
    out["users"] = users
    return out


def read_solution(scn: Scenario, path) -> tuple[np.ndarray, Placement]:
    """Power matrix and placement from a solution file; raises InputError on schema mismatch."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: {exc}") from exc
    if data.get("format") != SOLUTION_FORMAT:
        raise InputError(f"{path}: expected format {SOLUTION_FORMAT!r}")
    users = data.get("users")
    if not isinstance(users, list) or len(users) != scn.num_users:
        raise InputError(f"{path}: need one 'users' entry per scenario user ({scn.num_users})")
    try:
        users = sorted(users, key=lambda u: int(u["id"]))
        P = np.array([[float(v) for v in u["power_w"]] for u in users], dtype=float)
        pl = Placement.from_servers(scn, [[int(n) for n in u["servers"]] for u in users],
                                    [[[int(l) for l in p] for p in u["paths"]] for u in users])
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise InputError(f"{path}: malformed solution ({exc})") from exc
    if P.shape != (scn.num_users, scn.num_subchannels):
        raise InputError(f"{path}: power matrix shape {P.shape} does not match the scenario")
    return P, pl


def _load_scenario(path) -> Scenario:
    if not Path(path).is_file():
        raise InputError(f"{path}: no such file")
    try:
        return scen.load(path)
    except ScenarioValidationError as exc:
        raise InputError(str(exc)) from exc


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_run_figure(args) -> int:
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    plan = exp.figure_plan(args.figure, values=args.values, snapshots=args.snapshots,
                           methods=methods, out_dir=args.out, master_seed=args.seed,
                           common_draws=not args.independent_draws, config=_config(args))
    paths = exp.run_plan(plan, args.workers)
    for r in exp.summarize(exp.read_rows(paths["rows"])):
        print(f"{r['sweep']}={r['value']:<4} {r['method']:<6} feasible {r['feasible']}/"
              f"{r['snapshots']}  mean {r['mean_energy_j'] or '-'}")
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return EXIT_OK


def cmd_solve(args) -> int:
    scn = _load_scenario(args.scenario)
    run = run_jpsla if args.method == "jpsla" else run_ds
    alloc, pl, report = run(scn, _config(args))
    text = json.dumps(solution_dict(scn, alloc, pl, report), indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if not report.feasible:
        print(f"infeasible: constraint family {report.family or 'unknown'}: {report.message}",
              file=sys.stderr)
        return EXIT_INFEASIBLE
    if report.warning:
        print(f"warning: {report.warning}", file=sys.stderr)
    print(f"{report.method}: {report.status}, energy {report.energy_j:.6g} J "
          f"after {len(report.iterations)} iteration(s)", file=sys.stderr)
    return EXIT_OK


def cmd_validate(args) -> int:
    scn = _load_scenario(args.scenario)
    P, pl = read_solution(scn, args.solution)
    slacks = constraint_slacks(scn, P, pl)
    viol = check_feasibility(scn, P, pl)
    bad = {v.constraint for v in viol}
    for name in sorted(slacks, key=lambda c: int(c[1:])):
        flag = "VIOLATED" if name in bad else "ok"
        print(f"{name:<4} min slack {slacks[name]: .6g}  {flag}")
    for v in viol:
        print(f"  {v}")
    print("feasible" if not viol else f"infeasible: {', '.join(sorted(bad))}")
    return EXIT_OK if not viol else EXIT_INFEASIBLE


def cmd_generate_scenario(args) -> int:
    spec = scen.ScenarioSpec(seed=args.seed, num_subchannels=args.subchannels,
                             server_count=args.servers, users_per_slice=args.users_per_slice,
                             num_bs=args.bs)
    scn = scen.generate(spec)
    if args.out:
        scen.save(scn, args.out)
    else:
        sys.stdout.write(scen.dumps(scn))
    return EXIT_OK


COMMANDS = {"run-figure": cmd_run_figure, "solve": cmd_solve, "validate": cmd_validate,
            "generate-scenario": cmd_generate_scenario}


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (InputError, ValueError, OSError) as exc:
        print(f"e2eslice: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
