"""Closed-loop autofocus simulation.

A constant-speed motor drives the defocus ``dv``. The one-step controller
streams frames and events into an ELP monitor and stops on the sign
mutation. The stack-then-seek controller records a full focus stack, runs
a focus locator over it and drives back to the located position.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .detectors import (AWAY, FOCUSED, NOT_FOUND, REVERSED_THEN_FOCUSED, TOWARD, UNKNOWN,
                        EGSLocator, ELPDetector, PBFLocator, laplacian)
from .eventsim import (DEFAULT_CONTRAST, DEFAULT_LOG_FLOOR, EventGenerator, EventStream,
                       generate_events, impulse_noise)
from .exceptions import InvalidInputError, OutOfRangeError
from .optics import DefocusSweep, MotionParams, PsfModel, render_observation, render_sweep
from .validation import check_image, check_positive, check_roi

LOOP_CSV_HEADER = ("method", "scene", "motion", "fps", "start_dv_um", "final_dv_um", "error_um",
                   "focusing_time_us", "runtime_us", "verdict")


@dataclass(frozen=True)
class MotorModel:
    """Constant-speed lens motor with instantaneous stop.

    ``speed`` is in um of defocus per second, ``reversal_latency`` in us.
    """

    speed: float = 800.0
    dv_range: tuple = (-400.0, 400.0)
    reversal_latency: int = 5000

    def __post_init__(self):
        check_positive(self.speed, "speed")
        lo, hi = (float(v) for v in self.dv_range)
        if not lo < hi:
            raise InvalidInputError("motor range needs dv_min < dv_max")
        if self.reversal_latency < 0:
            raise InvalidInputError("reversal_latency must be >= 0")
        object.__setattr__(self, "dv_range", (lo, hi))

    @property
    def um_per_us(self) -> float:
        return self.speed * 1e-6

    def travel_time(self, dv_a: float, dv_b: float) -> float:
        return abs(dv_b - dv_a) / self.um_per_us

    def contains(self, dv: float) -> bool:
        return self.dv_range[0] <= dv <= self.dv_range[1]


@dataclass
class LoopOutcome:
    """Result of one closed-loop run. Times are in us, positions in um."""

    method: str
    final_dv: float
    error: float
    focusing_time: float
    algorithm_runtime: float
    events_processed: int
    verdict: str
    stop_time: int | None = None
    reversals: int = 0
    direction_errors: int = 0
    motor_time: float = 0.0
    acquisition_time: float = 0.0
    scene: str = ""
    motion: str = "static"
    fps: str = ""
    start_dv: float = 0.0
    trace: list = field(default_factory=list, compare=False, repr=False)
    trajectory: np.ndarray | None = field(default=None, compare=False, repr=False)
    events: EventStream | None = field(default=None, compare=False, repr=False)

    @property
    def found(self) -> bool:
        return self.verdict != NOT_FOUND

    def row(self) -> dict:
        return {"method": self.method, "scene": self.scene, "motion": self.motion,
                "fps": self.fps, "start_dv_um": self.start_dv, "final_dv_um": self.final_dv,
                "error_um": self.error, "focusing_time_us": self.focusing_time,
                "runtime_us": self.algorithm_runtime, "verdict": self.verdict}


class TimeBreakdown(NamedTuple):
    motor: float
    acquisition: float
    compute: float
    overlapped_acquisition: float

    @property
    def total(self) -> float:
        return self.motor + self.acquisition + self.compute


def _elapsed_us(clock, t0) -> float:
    return max(0.0, (clock() - t0) * 1e6)


def _method_name(det: ELPDetector) -> str:
    if not det.use_laplacian:
        return "ELP_no_laplacian"
    if not det.use_filter:
        return "ELP_no_filter"
    return "ELP"


def _check_start(motor: MotorModel, start_dv: float):
    if start_dv == 0:
        raise InvalidInputError("start_dv must be nonzero")
    if not motor.contains(start_dv):
        raise OutOfRangeError(f"start_dv={start_dv} outside motor range {motor.dv_range}")


def _ref_period(fps) -> int:
    check_positive(fps, "fps")
    return int(round(1e6 / fps))


def run_one_step_elp(scene, psf: PsfModel, motor: MotorModel = MotorModel(),
                     start_dv: float = -400.0, detector: ELPDetector | None = None, *,
                     fps: float = 50, initial_direction: str = TOWARD,
                     motion: MotionParams = MotionParams(), frame_period: int = 1000,
                     contrast_c: float = DEFAULT_CONTRAST, log_floor: float = DEFAULT_LOG_FLOOR,
                     noise_rate: float = 0.0, noise_seed: int = 0,
                     clock: Callable[[], float] | None = None,
                     keep_events: bool = False) -> LoopOutcome:
    """Drive toward focus while streaming events into an ELP monitor.

    Reference grey frames are captured every ``1/fps`` s (the ``t = 0`` frame
    is the only one a sub-second run sees at 1 FPS). Each detector tick the
    monitor gets one ELP sample. An ``away`` hint before the monitor has armed
    triggers a single reversal, costing ``motor.reversal_latency`` us at
    standstill; a sign mutation stops the motor. Leaving the motor range
    without a mutation ends the run as not found at the range boundary.
    """
    det = detector if detector is not None else ELPDetector()
    _check_start(motor, start_dv)
    if initial_direction not in (TOWARD, AWAY):
        raise InvalidInputError("initial_direction must be 'toward' or 'away'")
    fp = int(frame_period)
    if fp <= 0 or int(det.dt) % fp:
        raise InvalidInputError("detector dt must be a positive multiple of frame_period")
    ref_period = _ref_period(fps)
    clock = clock or time.perf_counter
    scene = check_image(scene, name="scene")

    direction = -np.sign(start_dv) if initial_direction == TOWARD else np.sign(start_dv)
    step_dv = motor.um_per_us * fp
    latency_frames = int(math.ceil(motor.reversal_latency / fp))
    steps = motion.displacements(fp)
    noise_rng = np.random.default_rng(noise_seed)

    shift = np.zeros(2)
    dv = float(start_dv)
    img = render_observation(scene, psf, dv)
    h, w = img.shape
    roi = check_roi(det.roi, w, h)
    gen = EventGenerator(contrast_c, log_floor)
    gen.reset(0, img)
    lap = laplacian(img) if det.use_laplacian else np.ones_like(img)
    monitor = det.make_monitor()

    t, hold, reversals, direction_errors = 0, 0, 0, 0
    judged = False
    tick_sum, n_events, runtime = 0.0, 0, 0.0
    traj = [(0, dv, 0.0, 0.0)]
    trace = []
    kept = []
    verdict, stop = NOT_FOUND, None
    while True:
        t += fp
        if hold:
            hold -= 1
        else:
            dv += direction * step_dv
        lo, hi = motor.dv_range
        if not lo - 1e-9 <= dv <= hi + 1e-9:
            dv = min(max(dv, lo), hi)
            traj.append((t, dv, float(shift[0]), float(shift[1])))
            break
        shift = shift + next(steps)
        img = render_observation(scene, psf, dv, (float(shift[0]), float(shift[1])))
        traj.append((t, dv, float(shift[0]), float(shift[1])))
        x, y, ts, p = gen.step(t, img)
        if noise_rate > 0:
            nx, ny, nt, npol = impulse_noise(w, h, t - fp, t, noise_rate, noise_rng)
            x, y = np.concatenate([x, nx]), np.concatenate([y, ny])
            ts, p = np.concatenate([ts, nt]), np.concatenate([p, npol])
        if keep_events:
            kept.append((x, y, ts, p))
        t0 = clock()
        if t % ref_period == 0 and det.use_laplacian:
            lap = laplacian(img)
        inside = (x >= roi.x0) & (x < roi.x1) & (y >= roi.y0) & (y < roi.y1)
        n_events += int(inside.sum())
        tick_sum += float(-np.sum(lap[y[inside], x[inside]] * p[inside]))
        mutated = False
        if t % int(det.dt) == 0:
            mutated = monitor.update(t, tick_sum)
            trace.append((t, monitor.raw[-1], monitor.filtered[-1]))
            tick_sum = 0.0
        runtime += _elapsed_us(clock, t0)
        if mutated:
            verdict = REVERSED_THEN_FOCUSED if reversals else FOCUSED
            stop = t
            break
        if not judged and monitor.hint != UNKNOWN:
            # the true direction is known from the trajectory
            truly_toward = abs(dv) < abs(dv - direction * step_dv)
            direction_errors += int((monitor.hint == TOWARD) != truly_toward)
            judged = True
        if monitor.hint == AWAY and not monitor.armed and reversals == 0:
            direction = -direction
            reversals = 1
            hold = latency_frames
            monitor.reset()
            judged = False

    stop_time = t if stop is None else stop
    events = None
    if keep_events:
        cols = [np.concatenate([c[i] for c in kept]) if kept else np.zeros(0, np.int64)
                for i in range(4)]
        events = EventStream.from_arrays(w, h, *cols, 0, int(traj[-1][0]), contrast_c)
    return LoopOutcome(
        method=_method_name(det), final_dv=float(dv), error=abs(float(dv)),
        focusing_time=float(stop_time), algorithm_runtime=runtime, events_processed=n_events,
        verdict=verdict, stop_time=stop, reversals=reversals, direction_errors=direction_errors,
        motor_time=float(stop_time), acquisition_time=float(stop_time), fps=f"{fps:g}", start_dv=float(start_dv), trace=trace,
        trajectory=np.array(traj, dtype=np.float64), events=events)


def make_locator(locator, dt: int = 1000):
    """Locator estimator from a name (``EGS``, ``EGS_scan``, ``PBF``) or pass-through."""
    if not isinstance(locator, str):
        return locator
    name = locator.upper()
    if name == "PBF":
        return PBFLocator(dt)
    if name in ("EGS", "EGS_GOLDEN"):
        return EGSLocator(dt, "golden")
    if name == "EGS_SCAN":
        return EGSLocator(dt, "scan")
    raise InvalidInputError(f"unknown locator {locator!r}")


def _locator_name(locator) -> str:
    if isinstance(locator, str):
        return locator.upper().replace("EGS_GOLDEN", "EGS")
    return {"PBFLocator": "PBF", "EGSLocator": "EGS"}.get(type(locator).__name__,
                                                         type(locator).__name__)


def seek_on_stack(events: EventStream, sweep: DefocusSweep, motor: MotorModel, locator,
                  clock: Callable[[], float] | None = None) -> LoopOutcome:
    """Locate focus on a recorded full stack and charge the return travel."""
    clock = clock or time.perf_counter
    est = make_locator(locator)
    t0 = clock()
    t_star = est.fit(events).focus_time_
    runtime = _elapsed_us(clock, t0)
    traverse = sweep.duration
    end_dv = float(sweep.knots_dv[-1])
    start_dv = float(sweep.knots_dv[0])
    if t_star is None:
        return LoopOutcome(_locator_name(locator), end_dv, abs(end_dv), traverse + runtime,
                           runtime, len(events), NOT_FOUND, None, motor_time=traverse,
                           acquisition_time=traverse, start_dv=start_dv)
    dv_star = float(sweep.dv_at(t_star))
    back = motor.travel_time(end_dv, dv_star)
    return LoopOutcome(_locator_name(locator), dv_star, abs(dv_star), traverse + runtime + back,
                       runtime, len(events), FOCUSED, int(t_star), motor_time=traverse + back,
                       acquisition_time=traverse, start_dv=start_dv)


def stack_sweep(motor: MotorModel, start_dv: float, frame_period: int = 1000,
                motion: MotionParams = MotionParams()) -> DefocusSweep:
    """Symmetric defocus -> focus -> defocus traversal from ``start_dv`` to ``-start_dv``."""
    _check_start(motor, start_dv)
    if not motor.contains(-start_dv):
        raise OutOfRangeError("mirrored stack end lies outside the motor range")
    duration = motor.travel_time(start_dv, -start_dv)
    n = int(round(duration / frame_period))
    if abs(n * frame_period - duration) > 1e-6 * duration:
        raise InvalidInputError("stack traversal is not a whole number of frame periods")
    return DefocusSweep.linear(start_dv, -start_dv, n * frame_period, frame_period, motion)


def run_stack_then_seek(scene, psf: PsfModel, motor: MotorModel = MotorModel(),
                        start_dv: float = -400.0, locator="PBF", *,
                        motion: MotionParams = MotionParams(), frame_period: int = 1000,
                        contrast_c: float = DEFAULT_CONTRAST, log_floor: float = DEFAULT_LOG_FLOOR,
                        noise_rate: float = 0.0, noise_seed: int = 0,
                        clock: Callable[[], float] | None = None) -> LoopOutcome:
    """Record the full stack, locate focus with EGS or PBF, then drive back."""
    sweep = stack_sweep(motor, start_dv, frame_period, motion)
    obs = render_sweep(scene, psf, sweep)
    events = generate_events([(o.t, o.image) for o in obs], contrast_c, log_floor,
                             noise_rate, noise_seed)
    out = seek_on_stack(events, sweep, motor, locator, clock)
    out.events = events
    out.trajectory = np.array([(o.t, o.dv, *o.shift) for o in obs], dtype=np.float64)
    return out


def focusing_time_breakdown(outcome: LoopOutcome) -> TimeBreakdown:
    """Split ``focusing_time`` into motor, non-overlapped acquisition and compute.

    Events are captured while the motor moves, so acquisition never adds to
    the total; its overlapped duration is reported separately. One-step
    compute runs between ticks and is likewise hidden behind motor travel.
    """
    if not outcome.found:
        raise InvalidInputError("no time breakdown for a run that did not focus")
    motor = float(outcome.motor_time)
    compute = float(outcome.focusing_time) - motor
    return TimeBreakdown(motor, 0.0, compute, float(outcome.acquisition_time))


def write_loop_csv(path, outcomes) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOOP_CSV_HEADER)
        for o in outcomes:
            r = o.row()
            w.writerow([r[k] if not isinstance(r[k], float) else repr(r[k]) for k in LOOP_CSV_HEADER])


def read_loop_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("start_dv_um", "final_dv_um", "error_um", "focusing_time_us", "runtime_us"):
            r[k] = float(r[k])
    return rows
