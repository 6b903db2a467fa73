"""Synthetic focus-stack datasets on disk.

Layout of one scenario directory::

    scenario.cfg      the scenario as key/value text
    events.csv        x,y,t_us,p
    trajectory.csv    t_us,dv_um,shift_x,shift_y (one row per rendered frame)
    frames/index.txt  "t_us file" lines; frames are 16-bit PGM, grey level * 256

``manifest.json`` in the dataset root lists every scenario with its seed,
status and artifact paths.
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import numpy as np

from ..afloop import stack_sweep
from ..eventsim import generate_events, read_events_csv, write_events_csv
from ..exceptions import InvalidInputError
from ..imageio import read_pgm, write_pgm
from ..optics import DOWNSAMPLE, render_sweep
from ..scenes import make_scene
from ..validation import check_image
from .config import ScenarioConfig, expand_config, parse_config_text

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
FRAME_SCALE = 256.0
TRAJECTORY_HEADER = ("t_us", "dv_um", "shift_x", "shift_y")


def load_scene(cfg: ScenarioConfig) -> np.ndarray:
    if cfg.scene_path.startswith("builtin:"):
        scene = make_scene(cfg.scene_name, cfg.scene_size_px, cfg.seed)
    else:
        scene = read_pgm(cfg.scene_path)
    return check_image(scene, divisible_by=DOWNSAMPLE, name="scene")


def write_frames(directory, frames) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for t, img in frames:
        name = f"frame_{int(t):09d}.pgm"
        levels = np.clip(np.rint(np.asarray(img) * FRAME_SCALE), 0, 65535)
        write_pgm(directory / name, levels, maxval=65535)
        lines.append(f"{int(t)} {name}")
    (directory / "index.txt").write_text("\n".join(lines) + "\n")


def read_frames(directory) -> list:
    directory = Path(directory)
    index = directory / "index.txt"
    if not index.exists():
        raise InvalidInputError(f"no frame index in {directory}")
    frames = []
    for line in index.read_text().splitlines():
        if line.strip():
            t, name = line.split()
            frames.append((int(t), read_pgm(directory / name) / FRAME_SCALE))
    return frames


def write_trajectory(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_HEADER)
        for t, dv, sx, sy in rows:
            w.writerow([int(t), repr(float(dv)), repr(float(sx)), repr(float(sy))])


def read_trajectory(path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 4:
        raise InvalidInputError(f"{path}: expected columns {','.join(TRAJECTORY_HEADER)}")
    return data


def _generate_one(cfg: ScenarioConfig, sdir: Path) -> dict:
    scene = load_scene(cfg)
    psf = cfg.psf_model()
    sweep = stack_sweep(cfg.motor(), cfg.start_dv_um, cfg.frame_period_us, cfg.motion_params())
    obs = render_sweep(scene, psf, sweep)
    events = generate_events([(o.t, o.image) for o in obs], cfg.contrast_c, cfg.log_floor,
                             cfg.noise_rate_hz, cfg.noise_seed)
    sdir.mkdir(parents=True, exist_ok=True)
    (sdir / "scenario.cfg").write_text(cfg.to_text())
    write_events_csv(sdir / "events.csv", events)
    write_trajectory(sdir / "trajectory.csv", [(o.t, o.dv, *o.shift) for o in obs])
    period = int(round(1e6 / cfg.fps))
    write_frames(sdir / "frames", [(o.t, o.image) for o in obs if o.t % period == 0])
    return {"width": events.width, "height": events.height, "events": len(events),
            "t_end_us": int(sweep.duration)}


def generate_dataset(configs, out_dir) -> dict:
    """Render every scenario into ``out_dir``; failures are recorded, not raised."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    used = set()
    for cfg in configs:
        sid = cfg.scenario_id
        k = 1
        while sid in used:
            k += 1
            sid = f"{cfg.scenario_id}_{k}"
        used.add(sid)
        entry = {"id": sid, "dir": sid, "seed": cfg.seed, "scene": cfg.scene_name,
                 "motion": cfg.motion, "fps": cfg.fps, "start_dv_um": cfg.start_dv_um,
                 "artifacts": {"config": "scenario.cfg", "events": "events.csv",
                               "trajectory": "trajectory.csv", "frames": "frames/index.txt"}}
        try:
            entry.update(_generate_one(cfg, out_dir / sid))
            entry["status"] = "ok"
        except (OSError, ValueError) as exc:
            log.error("scenario %s failed: %s", sid, exc)
            entry["status"] = "error"
            entry["error"] = str(exc)
        entries.append(entry)
    manifest = {"version": 1, "scenarios": entries}
    (out_dir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def load_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    manifest = json.loads(path.read_text())
    manifest["root"] = str(path.parent)
    return manifest


def scenario_config(sdir) -> ScenarioConfig:
    (cfg,) = expand_config(parse_config_text((Path(sdir) / "scenario.cfg").read_text()),
                           env_seed=False)
    return cfg


def load_scenario(sdir):
    """``(config, events, frames, trajectory)`` of one scenario directory."""
    sdir = Path(sdir)
    cfg = scenario_config(sdir)
    frames = read_frames(sdir / "frames")
    h, w = frames[0][1].shape
    traj = read_trajectory(sdir / "trajectory.csv")
    events = read_events_csv(sdir / "events.csv", w, h, int(traj[0, 0]), int(traj[-1, 0]),
                             cfg.contrast_c)
    return cfg, events, frames, traj
