"""Batch evaluation of autofocus methods over a generated dataset."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..afloop import LoopOutcome, run_one_step_elp, seek_on_stack, write_loop_csv
from ..detectors import write_trace_csv
from ..exceptions import InvalidInputError
from ..optics import DefocusSweep
from .dataset import load_manifest, load_scenario, load_scene

log = logging.getLogger(__name__)

ELP_METHODS = ("ELP", "ELP_no_filter", "ELP_no_laplacian")
STACK_METHODS = ("EGS", "PBF")
METHODS = ELP_METHODS + STACK_METHODS
AGGREGATE_HEADER = ("method", "motion", "fps", "n", "mae_um", "failures", "failure_rate",
                    "dof_pass_rate")


@dataclass
class BenchReport:
    rows: list = field(default_factory=list)
    aggregates: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    dof_um: float = 16.0

    @property
    def ok(self) -> bool:
        return not self.skipped

    def table(self) -> str:
        """Fixed-width MAE table; failed runs show up only in the failure columns."""
        head = f"{'method':<18}{'motion':<10}{'fps':>5}{'n':>4}{'MAE um':>9}{'fail':>6}{'in DoF':>8}"
        lines = [head, "-" * len(head)]
        for a in self.aggregates:
            mae = "/" if a["mae_um"] is None else f"{a['mae_um']:.2f}"
            lines.append(f"{a['method']:<18}{a['motion']:<10}{a['fps']:>5}{a['n']:>4}{mae:>9}"
                         f"{a['failures']:>6}{a['dof_pass_rate']:>8.0%}")
        if self.skipped:
            lines.append(f"skipped scenarios: {', '.join(self.skipped)}")
        return "\n".join(lines)


def aggregate(rows, dof_um: float = 16.0) -> list[dict]:
    """MAE over found runs per (method, motion, fps), failures counted separately."""
    groups = {}
    for r in rows:
        groups.setdefault((r.method, r.motion, r.fps), []).append(r)
    out = []
    for (method, motion, fps), rs in sorted(groups.items()):
        found = [r for r in rs if r.found]
        mae = float(np.mean([abs(r.error) for r in found])) if found else None
        passed = sum(1 for r in found if abs(r.error) <= dof_um)
        out.append({"method": method, "motion": motion, "fps": fps, "n": len(rs),
                    "mae_um": mae, "failures": len(rs) - len(found),
                    "failure_rate": (len(rs) - len(found)) / len(rs),
                    "dof_pass_rate": passed / len(rs)})
    return out


def _sweep_from_trajectory(traj: np.ndarray, frame_period: int) -> DefocusSweep:
    return DefocusSweep(tuple(traj[:, 0].tolist()), tuple(traj[:, 1].tolist()), frame_period)


def evaluate_scenario(sdir, methods, scenario_id: str = "") -> list[LoopOutcome]:
    """Run the requested methods on one scenario directory."""
    cfg, events, frames, traj = load_scenario(sdir)
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise InvalidInputError(f"unknown methods {sorted(unknown)}")
    out = []
    for method in methods:
        if method in ELP_METHODS:
            o = run_one_step_elp(load_scene(cfg), cfg.psf_model(), cfg.motor(), cfg.start_dv_um,
                                 cfg.detector(method), fps=cfg.fps,
                                 initial_direction=cfg.initial_direction,
                                 motion=cfg.motion_params(), frame_period=cfg.frame_period_us,
                                 contrast_c=cfg.contrast_c, log_floor=cfg.log_floor,
                                 noise_rate=cfg.noise_rate_hz, noise_seed=cfg.noise_seed)
        else:
            sweep = _sweep_from_trajectory(traj, cfg.frame_period_us)
            o = seek_on_stack(events, sweep, cfg.motor(), method)
            o.method = method
        o.scene, o.motion, o.fps = cfg.scene_name, cfg.motion, f"{cfg.fps:g}"
        o.events = None
        o.trajectory = None
        out.append((scenario_id, o))
    return out


def _task(args):
    sdir, methods, sid = args
    return evaluate_scenario(sdir, methods, sid)


def run_bench(manifest, methods, out_dir=None, max_workers: int = 1,
              dof_um: float = 16.0) -> BenchReport:
    """Evaluate ``methods`` on every scenario of ``manifest`` (path or loaded dict)."""
    if not isinstance(manifest, dict):
        manifest = load_manifest(manifest)
    methods = list(methods)
    if not methods or set(methods) - set(METHODS):
        raise InvalidInputError(f"methods must be a nonempty subset of {METHODS}")
    root = Path(manifest.get("root", "."))
    report = BenchReport(dof_um=dof_um)
    tasks = []
    for entry in manifest["scenarios"]:
        sdir = root / entry["dir"]
        missing = [a for a in entry.get("artifacts", {}).values() if not (sdir / a).exists()]
        if entry.get("status") != "ok" or missing:
            log.warning("skipping scenario %s (%s)", entry["id"],
                        entry.get("error") or f"missing {missing}")
            report.skipped.append(entry["id"])
            continue
        tasks.append((str(sdir), methods, entry["id"]))
    if max_workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(_task, tasks))
    else:
        results = [_task(t) for t in tasks]
    pairs = [p for res in results for p in res]
    report.rows = [o for _, o in pairs]
    report.aggregates = aggregate(report.rows, dof_um)
    if out_dir is not None:
        write_report(report, out_dir, pairs)
    return report


def write_report(report: BenchReport, out_dir, pairs=()) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_loop_csv(out_dir / "report.csv", report.rows)
    with open(out_dir / "aggregate.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(AGGREGATE_HEADER)
        for a in report.aggregates:
            w.writerow(["" if a[k] is None else a[k] for k in AGGREGATE_HEADER])
    (out_dir / "summary.txt").write_text(report.table() + "\n")
    for sid, o in pairs:
        if o.trace:
            tdir = out_dir / "traces" / sid
            tdir.mkdir(parents=True, exist_ok=True)
            write_trace_csv(tdir / f"{o.method}_elp_trace.csv", o.trace)
