"""Plot-ready CSV curves: ELP, per-polarity event rates and total event rate."""

from __future__ import annotations

import csv
from pathlib import Path

from ..detectors import ELPDetector, write_trace_csv
from ..eventsim import rate_curves
from .dataset import MANIFEST_NAME, load_manifest, load_scenario


def full_elp_trace(detector: ELPDetector, events, frames):
    """Raw and filtered ELP over the whole stream, without stopping at the mutation."""
    det = detector.fit(frames)
    ticks, raw = det.raw_trace(events)
    mon = det.make_monitor()
    for t, v in zip(ticks.tolist(), raw.tolist()):
        mon.update(t, v)
    return mon.trace()


def export_scenario_curves(sdir, out_dir) -> list[Path]:
    cfg, events, frames, _ = load_scenario(sdir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dt = cfg.event_dt_us
    ticks, pos, neg = rate_curves(events, dt)
    paths = [out_dir / "elp_trace.csv", out_dir / "epr_trace.csv", out_dir / "er_trace.csv"]
    write_trace_csv(paths[0], full_elp_trace(cfg.detector(), events, frames))
    with open(paths[1], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_us", "pos_rate", "neg_rate"])
        w.writerows([int(t), repr(float(a)), repr(float(b))] for t, a, b in zip(ticks, pos, neg))
    with open(paths[2], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_us", "event_rate"])
        w.writerows([int(t), repr(float(a + b))] for t, a, b in zip(ticks, pos, neg))
    return paths


def export_curves(run_dir, out_dir) -> list[Path]:
    """Curves for a dataset root (one subdirectory per scenario) or a single scenario."""
    run_dir = Path(run_dir)
    out_dir = Path(out_dir)
    if (run_dir / MANIFEST_NAME).exists():
        manifest = load_manifest(run_dir)
        paths = []
        for entry in manifest["scenarios"]:
            if entry.get("status") == "ok":
                paths += export_scenario_curves(run_dir / entry["dir"], out_dir / entry["id"])
        return paths
    return export_scenario_curves(run_dir, out_dir)
