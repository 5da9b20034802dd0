"""Snapshot sweeps behind the figure commands.

Rows file columns (``rows.csv``), one line per (sweep value, snapshot, method)::

    sweep, value, snapshot, seed, method, status, feasible, energy_j,
    iterations, best_iteration, family, violations

``violations`` counts the constraint violations found by re-auditing the
returned solution with :func:`check_feasibility`.  Both it and ``energy_j``
are empty for infeasible rows; energies are written with ``repr`` so the
file round-trips exactly.  Wall-clock times go to a separate
``timings.csv`` so that ``rows.csv`` and ``summary.csv`` are byte-identical
across reruns with the same master seed.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import check_feasibility
from .orchestrator import JpslaConfig, run_ds, run_jpsla
from .scenario import ScenarioSpec, generate

log = logging.getLogger(__name__)

WORKERS_ENV = "E2ESLICE_WORKERS"
SWEEPS = {"subchannels": "num_subchannels", "servers": "server_count",
          "users_per_slice": "users_per_slice"}
METHODS = {"jpsla": run_jpsla, "ds": run_ds}
ROW_FIELDS = ["sweep", "value", "snapshot", "seed", "method", "status", "feasible",
              "energy_j", "iterations", "best_iteration", "family", "violations"]
SUMMARY_FIELDS = ["sweep", "value", "method", "snapshots", "feasible", "infeasible_rate",
                  "mean_energy_j", "std_energy_j"]
PAIRED_FIELDS = ["sweep", "value", "both_feasible", "mean_jpsla_j", "mean_ds_j", "ratio"]
TIMING_FIELDS = ["sweep", "value", "snapshot", "method", "wall_s"]


@dataclass(frozen=True)
class ExperimentPlan:
    sweep: str
    values: tuple[int, ...]
    snapshots: int = 50
    base: ScenarioSpec = field(default_factory=ScenarioSpec)
    methods: tuple[str, ...] = ("jpsla", "ds")
    out_dir: str = "results"
    master_seed: int = 0
    config: JpslaConfig = field(default_factory=JpslaConfig)
    # same scenario draw for snapshot k at every sweep value (common random numbers)
    common_draws: bool = True

    def __post_init__(self):
        if self.sweep not in SWEEPS:
            raise ValueError(f"sweep must be one of {sorted(SWEEPS)}")
        if not self.values:
            raise ValueError("at least one sweep value required")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ValueError("sweep values must be strictly increasing")
        if self.snapshots < 1:
            raise ValueError("snapshots must be >= 1")
        bad = set(self.methods) - set(METHODS)
        if bad or not self.methods:
            raise ValueError(f"unknown methods {sorted(bad)}")

    def spec_for(self, value: int, snapshot: int) -> ScenarioSpec:
        return self.base.replace(**{SWEEPS[self.sweep]: int(value),
                                    "seed": snapshot_seed(self.master_seed, snapshot,
                                                          None if self.common_draws else value)})

    def to_dict(self) -> dict:
        return {"sweep": self.sweep, "values": list(self.values), "snapshots": self.snapshots,
                "methods": list(self.methods), "master_seed": self.master_seed,
                "common_draws": self.common_draws,
                "base": self.base.to_dict(), "config": dataclasses.asdict(self.config)}


FIGURES = {
    "fig1": dict(sweep="subchannels", values=(30, 35, 40, 45, 50, 55), base={"server_count": 20}),
    "fig2": dict(sweep="servers", values=(10, 15, 20, 25, 30), base={"num_subchannels": 30}),
    "fig3": dict(sweep="users_per_slice", values=(2, 4, 6, 8, 10), base={"num_subchannels": 50}),
}


def figure_plan(name: str, **overrides) -> ExperimentPlan:
    """Plan for one of the three figure setups; keyword arguments override plan fields."""
    if name not in FIGURES:
        raise ValueError(f"unknown figure {name!r}; choose from {sorted(FIGURES)}")
    preset = FIGURES[name]
    base = overrides.pop("base", ScenarioSpec()).replace(**preset["base"])
    kw = dict(sweep=preset["sweep"], values=preset["values"], base=base)
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentPlan(**kw)


def snapshot_seed(master: int, snapshot: int, value: int | None = None) -> int:
    """Seed of one snapshot from the master seed and index, plus the sweep value if given.

    Without ``value`` every sweep point sees the same draws, so differences
    between points reflect the swept parameter rather than the topology.
    Adding sweep points or snapshots never changes existing seeds either way.
    """
    key = (int(snapshot),) if value is None else (int(value), int(snapshot))
    ss = np.random.SeedSequence(int(master), spawn_key=key)
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def run_snapshot(spec: ScenarioSpec, methods, cfg: JpslaConfig) -> list[dict]:
    """All methods on one snapshot; failures become rows, never exceptions."""
    out = []
    try:
        scn = generate(spec)
    except Exception as exc:  # a bad draw must not abort the sweep
        log.warning("seed %d: scenario generation failed: %s", spec.seed, exc)
        return [_row(m, "error", None, type(exc).__name__, 0.0) for m in methods]
    for m in methods:
        t0 = time.perf_counter()
        try:
            p, pl, rep = METHODS[m](scn, cfg)
        except Exception as exc:
            log.warning("seed %d, %s: %s", spec.seed, m, exc)
            out.append(_row(m, "error", None, type(exc).__name__, time.perf_counter() - t0))
            continue
        wall = time.perf_counter() - t0
        row = _row(m, rep.status, rep, rep.family, wall)
        if p is not None:
            row["violations"] = len(check_feasibility(scn, p, pl))
        out.append(row)
    return out


def _row(method, status, rep, family, wall):
    feasible = rep is not None and rep.feasible
    return {
        "method": method, "status": status, "feasible": int(feasible),
        "energy_j": repr(float(rep.energy_j)) if feasible else "",
        "iterations": len(rep.iterations) if rep is not None else 0,
        "best_iteration": rep.best_iteration if feasible else "",
        "family": family or "", "violations": "", "wall_s": wall,
    }


def _task(args):
    spec, methods, cfg = args
    return run_snapshot(spec, methods, cfg)


def workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def run_plan(plan: ExperimentPlan, n_workers: int | None = None) -> dict[str, Path]:
    """Run every snapshot of ``plan`` and write rows, summary, paired, timings and plot files."""
    out = Path(plan.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory {out} is not writable")
    jobs, keys = [], []
    for value in plan.values:
        for snap in range(plan.snapshots):
            spec = plan.spec_for(value, snap)
            jobs.append((spec, plan.methods, plan.config))
            keys.append((value, snap, spec.seed))
    n_workers = n_workers or workers()
    if n_workers > 1:
        with ProcessPoolExecutor(n_workers) as pool:
            results = list(pool.map(_task, jobs, chunksize=1))
    else:
        results = [_task(j) for j in jobs]

    rows, timings = [], []
    for (value, snap, seed), res in zip(keys, results):
        for r in res:
            rows.append({"sweep": plan.sweep, "value": value, "snapshot": snap, "seed": seed,
                         **{k: r[k] for k in ROW_FIELDS if k in r}})
            timings.append({"sweep": plan.sweep, "value": value, "snapshot": snap,
                            "method": r["method"], "wall_s": f"{r['wall_s']:.3f}"})
    paths = {
        "rows": _write_csv(out / "rows.csv", ROW_FIELDS, rows),
        "summary": _write_csv(out / "summary.csv", SUMMARY_FIELDS, summarize(rows)),
        "timings": _write_csv(out / "timings.csv", TIMING_FIELDS, timings),
    }
    if {"jpsla", "ds"} <= set(plan.methods):
        paths["paired"] = _write_csv(out / "paired.csv", PAIRED_FIELDS, paired(rows))
    paths["plot"] = out / "energy.svg"
    paths["plot"].write_text(svg_plot(summarize(rows), plan.sweep))
    paths["plan"] = out / "plan.json"
    paths["plan"].write_text(json.dumps(plan.to_dict(), indent=2, sort_keys=True) + "\n")
    return paths


def _write_csv(path: Path, fields, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in fields})
    return path


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["value"] = int(r["value"])
        r["snapshot"] = int(r["snapshot"])
        r["feasible"] = int(r["feasible"])
        r["energy_j"] = float(r["energy_j"]) if r["energy_j"] else math.nan
    return rows


def _energy(r) -> float:
    e = r["energy_j"]
    return float(e) if e not in ("", None) else math.nan


def summarize(rows) -> list[dict]:
    """Mean and sample std over feasible snapshots, per (value, method)."""
    groups: dict[tuple, list] = {}
    for r in rows:
        groups.setdefault((r["sweep"], int(r["value"]), r["method"]), []).append(r)
    out = []
    for (sweep, value, method), rs in groups.items():
        e = np.array([_energy(r) for r in rs if int(r["feasible"])])
        out.append({
            "sweep": sweep, "value": value, "method": method, "snapshots": len(rs),
            "feasible": e.size, "infeasible_rate": repr(1.0 - e.size / len(rs)),
            "mean_energy_j": repr(float(e.mean())) if e.size else "",
            "std_energy_j": repr(float(e.std(ddof=1)) if e.size > 1 else 0.0) if e.size else "",
        })
    return out


def paired(rows) -> list[dict]:
    """JPSLA against DS on the snapshots where both are feasible."""
    by_key: dict[tuple, dict] = {}
    for r in rows:
        by_key.setdefault((r["sweep"], int(r["value"]), int(r["snapshot"])), {})[r["method"]] = r
    points: dict[tuple, list] = {}
    for (sweep, value, _), ms in by_key.items():
        if "jpsla" in ms and "ds" in ms and int(ms["jpsla"]["feasible"]) and int(ms["ds"]["feasible"]):
            points.setdefault((sweep, value), []).append(
                (_energy(ms["jpsla"]), _energy(ms["ds"])))
        else:
            points.setdefault((sweep, value), [])
    out = []
    for (sweep, value), pairs_ in points.items():
        if pairs_:
            j = float(np.mean([a for a, _ in pairs_]))
            d = float(np.mean([b for _, b in pairs_]))
            out.append({"sweep": sweep, "value": value, "both_feasible": len(pairs_),
                        "mean_jpsla_j": repr(j), "mean_ds_j": repr(d), "ratio": repr(j / d)})
        else:
            out.append({"sweep": sweep, "value": value, "both_feasible": 0})
    return out


def svg_plot(summary, sweep: str, width: int = 480, height: int = 320) -> str:
    """Mean energy against the sweep value, one polyline per method."""
    series: dict[str, list] = {}
    for r in summary:
        if r["mean_energy_j"] != "":
            series.setdefault(r["method"], []).append((int(r["value"]), float(r["mean_energy_j"])))
    pad = 50
    pts = [p for s in series.values() for p in s]
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>']
    if pts:
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        x0, x1 = min(xs), max(xs) if max(xs) > min(xs) else min(xs) + 1
        y0, y1 = min(ys), max(ys) if max(ys) > min(ys) else min(ys) * 1.1 + 1e-300

        def sx(v):
            return pad + (v - x0) / (x1 - x0) * (width - 2 * pad)

        def sy(v):
            return height - pad - (v - y0) / (y1 - y0) * (height - 2 * pad)

        colours = {"jpsla": "#1f77b4", "ds": "#d62728"}
        for k, (m, s) in enumerate(sorted(series.items())):
            s.sort()
            coords = " ".join(f"{sx(a):.1f},{sy(b):.1f}" for a, b in s)
            c = colours.get(m, "black")
            lines.append(f'<polyline fill="none" stroke="{c}" stroke-width="2" points="{coords}"/>')
            lines.append(f'<text x="{width - pad}" y="{20 + 15 * k}" fill="{c}" '
                         f'font-size="12" text-anchor="end">{m}</text>')
        lines.append(f'<text x="{pad}" y="{height - 10}" font-size="12">{sweep} '
                     f'{x0}..{x1}</text>')
        lines.append(f'<text x="5" y="{pad - 10}" font-size="12">energy (J) '
                     f'{y0:.3g}..{y1:.3g}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
