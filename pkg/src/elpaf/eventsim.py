"""Event generation from rendered frames and event-stream statistics.

Timestamps are integer microseconds. Windows are half-open, ``(t - dt, t]``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import InvalidInputError
from .validation import check_image, check_positive

DEFAULT_CONTRAST = 0.2
DEFAULT_LOG_FLOOR = 1.0
_LEVEL_TOL = 1e-9
CSV_HEADER = ("x", "y", "t_us", "p")


class Event(NamedTuple):
    x: int
    y: int
    t: int
    p: int


def _sort_order(x, y, t, p):
    return np.lexsort((p, x, y, t))


@dataclass(frozen=True, eq=False)
class EventStream:
    """Time-ordered events stored column-wise."""

    width: int
    height: int
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray
    t_begin: int
    t_end: int
    contrast_c: float = DEFAULT_CONTRAST

    def __post_init__(self):
        for name, dtype in (("x", np.int32), ("y", np.int32), ("t", np.int64), ("p", np.int8)):
            object.__setattr__(self, name, np.ascontiguousarray(getattr(self, name), dtype=dtype))
        n = self.t.size
        if not (self.x.size == self.y.size == self.p.size == n):
            raise InvalidInputError("event columns differ in length")
        if n:
            if np.any(np.diff(self.t) < 0):
                raise InvalidInputError("events are not sorted by time")
            if self.t[0] < self.t_begin or self.t[-1] > self.t_end:
                raise InvalidInputError("events fall outside [t_begin, t_end]")
            if self.x.min() < 0 or self.x.max() >= self.width or \
                    self.y.min() < 0 or self.y.max() >= self.height:
                raise InvalidInputError("event coordinates outside the sensor")
            if np.any(np.abs(self.p) != 1):
                raise InvalidInputError("polarity must be -1 or +1")

    @classmethod
    def from_arrays(cls, width, height, x, y, t, p, t_begin, t_end,
                    contrast_c=DEFAULT_CONTRAST) -> "EventStream":
        """Build a stream from unsorted columns, applying the (t, y, x, p) order."""
        x, y, t, p = (np.asarray(a) for a in (x, y, t, p))
        order = _sort_order(x, y, t, p)
        return cls(width, height, x[order], y[order], t[order], p[order],
                   int(t_begin), int(t_end), contrast_c)

    @classmethod
    def empty(cls, width, height, t_begin, t_end, contrast_c=DEFAULT_CONTRAST):
        z = np.zeros(0)
        return cls(width, height, z, z, z, z, int(t_begin), int(t_end), contrast_c)

    def __len__(self):
        return int(self.t.size)

    def __iter__(self) -> Iterator[Event]:
        for x, y, t, p in zip(self.x.tolist(), self.y.tolist(), self.t.tolist(), self.p.tolist()):
            yield Event(x, y, t, p)

    @property
    def shape(self):
        return (self.height, self.width)

    def window_slice(self, t: int, dt: int) -> slice:
        """Index range of the events with ``t - dt < t_i <= t``."""
        lo = int(np.searchsorted(self.t, t - dt, side="right"))
        hi = int(np.searchsorted(self.t, t, side="right"))
        return slice(lo, hi)

    def merged(self, other: "EventStream") -> "EventStream":
        if (other.width, other.height) != (self.width, self.height):
            raise InvalidInputError("cannot merge streams of different sensor sizes")
        cat = [np.concatenate([getattr(self, c), getattr(other, c)]) for c in "xytp"]
        return EventStream.from_arrays(self.width, self.height, *cat,
                                       min(self.t_begin, other.t_begin),
                                       max(self.t_end, other.t_end), self.contrast_c)


@dataclass(frozen=True, eq=False)
class EventFrame:
    counts: np.ndarray  # int64, shape (height, width)
    t: int
    dt: int

    @property
    def window(self):
        return (self.t - self.dt, self.t)

    @property
    def width(self):
        return self.counts.shape[1]

    @property
    def height(self):
        return self.counts.shape[0]


class EventGenerator:
    """Per-pixel threshold-crossing event model, fed one frame at a time.

    Each pixel keeps a reference level in log intensity ``ln(I + log_floor)``.
    Every full crossing of ``+-contrast_c`` from the reference emits one event
    with a timestamp linearly interpolated inside the interframe interval and
    moves the reference by one threshold step.
    """

    def __init__(self, contrast_c: float = DEFAULT_CONTRAST, log_floor: float = DEFAULT_LOG_FLOOR):
        self.contrast_c = check_positive(contrast_c, "contrast_c")
        self.log_floor = check_positive(log_floor, "log_floor")
        self.reference = None
        self._last_log = None
        self._last_t = None

    def log_intensity(self, image) -> np.ndarray:
        return np.log(np.asarray(image, dtype=np.float64) + self.log_floor)

    def reset(self, t: int, image) -> None:
        self._last_log = self.log_intensity(image)
        self.reference = self._last_log.copy()
        self._last_t = int(t)

    def step(self, t: int, image):
        """Consume the next frame; return event columns ``(x, y, t, p)`` in (t, y, x, p) order."""
        if self.reference is None:
            raise InvalidInputError("EventGenerator.step called before reset")
        t = int(t)
        t0 = self._last_t
        if t <= t0:
            raise InvalidInputError("frame times must increase")
        L0, L1 = self._last_log, self.log_intensity(image)
        if L1.shape != L0.shape:
            raise InvalidInputError("frame size changed mid-stream")
        C = self.contrast_c
        ref = self.reference
        diff = L1 - ref
        n_pos = np.floor(np.maximum(diff, 0.0) / C + _LEVEL_TOL).astype(np.int64)
        n_neg = np.floor(np.maximum(-diff, 0.0) / C + _LEVEL_TOL).astype(np.int64)
        cols = []
        for counts, sign in ((n_pos, 1), (n_neg, -1)):
            flat = counts.ravel()
            idx = np.flatnonzero(flat)
            if idx.size == 0:
                continue
            reps = flat[idx]
            pix = np.repeat(idx, reps)
            # k-th crossing (1-based) of the pixel
            starts = np.cumsum(reps) - reps
            k = np.arange(pix.size) - np.repeat(starts, reps) + 1
            level = ref.ravel()[pix] + sign * k * C
            l0, l1 = L0.ravel()[pix], L1.ravel()[pix]
            span = l1 - l0
            safe = np.where(span != 0, span, 1.0)
            frac = np.clip(np.where(span != 0, (level - l0) / safe, 1.0), 0.0, 1.0)
            ts = np.clip(np.rint(t0 + frac * (t - t0)), t0 + 1, t).astype(np.int64)
            ys, xs = np.divmod(pix, L0.shape[1])
            cols.append((xs, ys, ts, np.full(pix.size, sign, dtype=np.int8)))
        self.reference = ref + C * (n_pos - n_neg)
        self._last_log = L1
        self._last_t = t
        if not cols:
            z = np.zeros(0, dtype=np.int64)
            return z, z, z, z.astype(np.int8)
        x, y, ts, p = (np.concatenate(c) for c in zip(*cols))
        order = _sort_order(x, y, ts, p)
        return x[order], y[order], ts[order], p[order]


def impulse_noise(width: int, height: int, t0: int, t1: int, rate_hz: float,
                  rng: np.random.Generator):
    """Uniformly scattered random-polarity events at ``rate_hz`` over the sensor in (t0, t1]."""
    n = rng.poisson(rate_hz * (t1 - t0) * 1e-6) if rate_hz > 0 else 0
    x = rng.integers(0, width, n)
    y = rng.integers(0, height, n)
    t = rng.integers(t0 + 1, t1 + 1, n) if n else np.zeros(0, dtype=np.int64)
    p = rng.choice(np.array([-1, 1], dtype=np.int8), n)
    return x, y, t, p


def _check_frames(frames):
    if len(frames) < 2:
        raise InvalidInputError("need at least two frames")
    times = np.array([int(f[0]) for f in frames], dtype=np.int64)
    steps = np.diff(times)
    if np.any(steps <= 0) or np.any(steps != steps[0]):
        raise InvalidInputError("frame timing must be uniform and increasing")
    return times


def generate_events(frames: Sequence, contrast_c: float = DEFAULT_CONTRAST,
                    log_floor: float = DEFAULT_LOG_FLOOR, noise_rate: float = 0.0,
                    seed: int = 0) -> EventStream:
    """Convert ``[(t, image), ...]`` into an event stream.

    ``noise_rate`` adds impulse noise events (events/s over the whole sensor).
    """
    times = _check_frames(frames)
    first = check_image(frames[0][1], name="frame")
    gen = EventGenerator(contrast_c, log_floor)
    gen.reset(times[0], first)
    chunks = [gen.step(t, f[1]) for t, f in zip(times[1:], frames[1:])]
    h, w = first.shape
    cols = [np.concatenate([c[i] for c in chunks]) for i in range(4)]
    stream = EventStream(w, h, *cols, int(times[0]), int(times[-1]), contrast_c)
    if noise_rate > 0:
        rng = np.random.default_rng(seed)
        nx, ny, nt, np_ = impulse_noise(w, h, int(times[0]), int(times[-1]), noise_rate, rng)
        stream = stream.merged(EventStream.from_arrays(w, h, nx, ny, nt, np_, times[0],
                                                       times[-1], contrast_c))
    return stream


def add_impulse_noise(stream: EventStream, rate_hz: float, seed: int = 0) -> EventStream:
    rng = np.random.default_rng(seed)
    cols = impulse_noise(stream.width, stream.height, stream.t_begin, stream.t_end, rate_hz, rng)
    noise = EventStream.from_arrays(stream.width, stream.height, *cols, stream.t_begin,
                                    stream.t_end, stream.contrast_c)
    return stream.merged(noise)


class EventSimulator(TransformerMixin, BaseEstimator):
    """scikit-learn style wrapper around :func:`generate_events`."""

    def __init__(self, contrast_c=DEFAULT_CONTRAST, log_floor=DEFAULT_LOG_FLOOR,
                 noise_rate=0.0, seed=0):
        self.contrast_c = contrast_c
        self.log_floor = log_floor
        self.noise_rate = noise_rate
        self.seed = seed

    def fit(self, X=None, y=None):
        check_positive(self.contrast_c, "contrast_c")
        check_positive(self.log_floor, "log_floor")
        return self

    def transform(self, X):
        frames = [(obs[0], obs[1]) for obs in X]
        return generate_events(frames, self.contrast_c, self.log_floor, self.noise_rate, self.seed)


def accumulate_event_frame(stream: EventStream, t: int, dt: int) -> EventFrame:
    """Signed per-pixel polarity sum over ``(t - dt, t]``."""
    if not dt > 0:
        raise InvalidInputError("dt must be positive")
    s = stream.window_slice(t, dt)
    flat = np.bincount(stream.y[s].astype(np.int64) * stream.width + stream.x[s],
                       weights=stream.p[s], minlength=stream.width * stream.height)
    counts = np.rint(flat).astype(np.int64).reshape(stream.height, stream.width)
    return EventFrame(counts, int(t), int(dt))


def event_rate(stream: EventStream, t: int, dt: int) -> float:
    """Events per second in ``(t - dt, t]``."""
    if not dt > 0:
        raise InvalidInputError("dt must be positive")
    s = stream.window_slice(t, dt)
    return (s.stop - s.start) / (dt * 1e-6)


def polarity_rates(stream: EventStream, t: int, dt: int):
    """``(positive, negative)`` events per second in ``(t - dt, t]``."""
    if not dt > 0:
        raise InvalidInputError("dt must be positive")
    s = stream.window_slice(t, dt)
    n_pos = int(np.count_nonzero(stream.p[s] > 0))
    n_neg = (s.stop - s.start) - n_pos
    return n_pos / (dt * 1e-6), n_neg / (dt * 1e-6)


def tick_times(stream: EventStream, dt: int) -> np.ndarray:
    """Window end times ``t_begin + k*dt`` for k = 1 .. floor(span / dt)."""
    n = (stream.t_end - stream.t_begin) // int(dt)
    return stream.t_begin + int(dt) * np.arange(1, n + 1, dtype=np.int64)


def rate_curves(stream: EventStream, dt: int):
    """Vectorised ``(ticks, pos_rate, neg_rate)`` over the whole stream."""
    ticks = tick_times(stream, dt)
    edges = np.concatenate([[ticks[0] - dt], ticks]) if ticks.size else np.zeros(1, np.int64)
    pos_t = stream.t[stream.p > 0]
    neg_t = stream.t[stream.p < 0]
    pos = np.diff(np.searchsorted(pos_t, edges, side="right"))
    neg = np.diff(np.searchsorted(neg_t, edges, side="right"))
    scale = 1.0 / (dt * 1e-6)
    return ticks, pos * scale, neg * scale


def write_events_csv(path, stream: EventStream) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        if len(stream):
            data = np.column_stack([stream.x, stream.y, stream.t, stream.p]).astype(np.int64)
            np.savetxt(fh, data, fmt="%d", delimiter=",")


def read_events_csv(path, width: int, height: int, t_begin: int | None = None,
                    t_end: int | None = None, contrast_c: float = DEFAULT_CONTRAST) -> EventStream:
    """Read an event CSV; unsorted files are rejected."""
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise InvalidInputError(f"{path}: expected header {','.join(CSV_HEADER)}")
        data = np.loadtxt(fh, dtype=np.int64, delimiter=",", ndmin=2)
    if data.size == 0:
        data = np.zeros((0, 4), dtype=np.int64)
    x, y, t, p = data.T
    order = _sort_order(x, y, t, p)
    if np.any(order != np.arange(order.size)):
        raise InvalidInputError(f"{path}: events not ordered by (t_us, y, x, p)")
    if t_begin is None:
        t_begin = int(t[0]) if t.size else 0
    if t_end is None:
        t_end = int(t[-1]) if t.size else t_begin
    return EventStream(width, height, x, y, t, p, int(t_begin), int(t_end), contrast_c)
