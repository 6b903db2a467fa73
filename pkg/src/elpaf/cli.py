"""Command line entry point: ``elpaf simulate | detect | bench | curves | make-scenes``.

Exit codes: 0 success, 1 a scenario or input failed, 2 invalid configuration
or arguments.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .afloop import make_locator
from .bench.config import load_configs
from .bench.curves import export_curves
from .bench.dataset import generate_dataset, read_frames, read_trajectory
from .bench.harness import ELP_METHODS, METHODS, run_bench
from .detectors import ELPDetector, write_trace_csv
from .eventsim import read_events_csv
from .exceptions import ConfigError, InvalidInputError
from .imageio import write_pgm
from .scenes import SCENES, make_scene

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2
log = logging.getLogger("elpaf")


def _cmd_simulate(args) -> int:
    configs = load_configs(args.config)
    manifest = generate_dataset(configs, args.out)
    bad = [e["id"] for e in manifest["scenarios"] if e["status"] != "ok"]
    print(f"{len(manifest['scenarios']) - len(bad)} scenarios written to {args.out}")
    for sid in bad:
        print(f"failed: {sid}", file=sys.stderr)
    return EXIT_FAILED if bad else EXIT_OK


def _parse_methods(text: str) -> list[str]:
    methods = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if not methods or bad:
        raise ConfigError(f"methods must be a comma list drawn from {','.join(METHODS)}")
    return methods


def _cmd_bench(args) -> int:
    methods = _parse_methods(args.methods)
    if not Path(args.manifest).exists():
        print(f"manifest not found: {args.manifest}", file=sys.stderr)
        return EXIT_FAILED
    report = run_bench(args.manifest, methods, args.out, max_workers=args.workers,
                       dof_um=args.dof_um)
    print(report.table())
    return EXIT_OK if report.ok else EXIT_FAILED


def _cmd_detect(args) -> int:
    method = args.method
    if method not in METHODS:
        raise ConfigError(f"--method must be one of {','.join(METHODS)}")
    frames = read_frames(args.frames)
    h, w = frames[0][1].shape
    traj_path = Path(args.trajectory) if args.trajectory else Path(args.events).with_name(
        "trajectory.csv")
    traj = read_trajectory(traj_path) if traj_path.exists() else None
    t_begin = int(traj[0, 0]) if traj is not None else None
    t_end = int(traj[-1, 0]) if traj is not None else None
    events = read_events_csv(args.events, w, h, t_begin, t_end)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dv_of_t = None
    if traj is not None:
        def dv_of_t(t):
            return float(np.interp(t, traj[:, 0], traj[:, 1]))
    if method in ELP_METHODS:
        det = ELPDetector(dt=args.dt, use_filter=method != "ELP_no_filter",
                          use_laplacian=method != "ELP_no_laplacian")
        rep = det.fit(frames).predict(events, dv_of_t)
        t_star, verdict = rep.stop_time, rep.verdict
        write_trace_csv(out / "elp_trace.csv", rep.trace)
    else:
        t_star = make_locator(method, args.dt).fit(events).focus_time_
        verdict = "focused" if t_star is not None else "not_found"
    dv = "" if t_star is None or dv_of_t is None else repr(dv_of_t(t_star))
    with open(out / "detection.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["method", "focus_time_us", "focus_dv_um", "verdict"])
        wr.writerow([method, "" if t_star is None else int(t_star), dv, verdict])
    print(f"{method}: focus_time_us={t_star} focus_dv_um={dv or None} verdict={verdict}")
    return EXIT_OK


def _cmd_curves(args) -> int:
    paths = export_curves(args.run, args.out)
    print(f"wrote {len(paths)} curve files to {args.out}")
    return EXIT_OK


def _cmd_make_scenes(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    unknown = set(args.names) - set(SCENES)
    if unknown:
        raise ConfigError(f"unknown scenes {sorted(unknown)}")
    for name in args.names or sorted(SCENES):
        write_pgm(out / f"{name}.pgm", make_scene(name, args.size, args.seed).round(), maxval=255)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="elpaf", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="render a synthetic dataset from a scenario config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_simulate)

    s = sub.add_parser("detect", help="run one detector on a recorded event stream")
    s.add_argument("--events", required=True)
    s.add_argument("--frames", required=True, help="directory with index.txt and PGM frames")
    s.add_argument("--method", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--trajectory", help="t_us,dv_um,... CSV (default: next to --events)")
    s.add_argument("--dt", type=int, default=1000, help="event-frame window in us")
    s.set_defaults(func=_cmd_detect)

    s = sub.add_parser("bench", help="evaluate methods over a dataset manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--methods", default="ELP,EGS,PBF")
    s.add_argument("--out", required=True)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--dof-um", type=float, default=16.0)
    s.set_defaults(func=_cmd_bench)

    s = sub.add_parser("curves", help="export ELP / EPR / ER curves as CSV")
    s.add_argument("--run", required=True, help="dataset root or scenario directory")
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_curves)

    s = sub.add_parser("make-scenes", help="write the built-in test scenes as PGM")
    s.add_argument("--out", required=True)
    s.add_argument("--size", type=int, default=192)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("names", nargs="*", help=f"subset of {', '.join(sorted(SCENES))}")
    s.set_defaults(func=_cmd_make_scenes)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, InvalidInputError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
