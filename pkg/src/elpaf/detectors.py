"""Focus detectors: the Event Laplacian Product (ELP) with its adaptive filter,
and the event-rate (EGS) and polarity-symmetry (PBF) stack locators.

The locators follow the scikit-learn estimator conventions: constructor
arguments are hyper-parameters, ``fit`` consumes data and sets attributes with
a trailing underscore.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .eventsim import EventFrame, EventStream, rate_curves, tick_times
from .exceptions import InvalidInputError
from .validation import check_roi

TOWARD, AWAY, UNKNOWN = "toward", "away", "unknown"
FOCUSED, NOT_FOUND, REVERSED_THEN_FOCUSED = "focused", "not_found", "reversed_then_focused"

DEFAULT_EPS_FRAC = 0.02
DEFAULT_MIN_SAMPLES = 3
DEFAULT_SIGN_Z = 2.0
DEFAULT_NOISE_K = 3.0
DEFAULT_DT = 1000


def laplacian(image) -> np.ndarray:
    """5-point Laplacian with odd (point-symmetric) reflection at the borders.

    Odd reflection pads with ``2*a[0] - a[1]``, so affine images map to zero
    everywhere, borders included.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) < 3:
        raise InvalidInputError("laplacian needs an image of at least 3x3")
    p = np.pad(img, 1, mode="reflect", reflect_type="odd")
    return p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4.0 * img


def _counts(frame) -> np.ndarray:
    return frame.counts if isinstance(frame, EventFrame) else np.asarray(frame)


def elp_value(lap, frame, roi=None) -> float:
    """``-sum(lap * counts)`` over ``roi``."""
    lap = np.asarray(lap, dtype=np.float64)
    counts = _counts(frame)
    if lap.shape != counts.shape:
        raise InvalidInputError(f"laplacian {lap.shape} and event frame {counts.shape} differ")
    r = check_roi(roi, counts.shape[1], counts.shape[0])
    return float(-np.sum(lap[r.y0:r.y1, r.x0:r.x1] * counts[r.y0:r.y1, r.x0:r.x1]))


def elp_no_laplacian(frame, roi=None) -> float:
    """ELP with the Laplacian replaced by ones: negative minus positive event count."""
    counts = _counts(frame)
    r = check_roi(roi, counts.shape[1], counts.shape[0])
    return float(-np.sum(counts[r.y0:r.y1, r.x0:r.x1]))


@dataclass(frozen=True)
class FilterParams:
    window_w: int = 10
    smoothing_s: float = 0.3
    thd_mode: str = "relative"
    thd_value: float = 0.25

    def __post_init__(self):
        if int(self.window_w) != self.window_w or self.window_w < 1:
            raise InvalidInputError("window_w must be an integer >= 1")
        if not 0.0 <= self.smoothing_s <= 1.0:
            raise InvalidInputError("smoothing_s must lie in [0, 1]")
        if self.thd_mode not in ("absolute", "relative"):
            raise InvalidInputError("thd_mode must be 'absolute' or 'relative'")
        if not self.thd_value > 0:
            raise InvalidInputError("thd_value must be positive")


@dataclass(frozen=True)
class FilterState:
    buffer: tuple = ()
    running_max: float = 0.0


def filter_step(state: FilterState, params: FilterParams, now: float):
    """One step of the adaptive ELP filter; returns ``(filtered, new_state)``.

    Values close to the recent mean are blended toward it; values that jump by
    at least the threshold pass through untouched. Filtered values feed the
    buffer.
    """
    now = float(now)
    if not state.buffer:
        filtered = now
    else:
        mean = sum(state.buffer) / len(state.buffer)
        thd = params.thd_value if params.thd_mode == "absolute" \
            else params.thd_value * state.running_max
        if abs(now - mean) < thd:
            filtered = params.smoothing_s * now + (1.0 - params.smoothing_s) * mean
        else:
            filtered = now
    buffer = (state.buffer + (filtered,))[-params.window_w:]
    return filtered, FilterState(buffer, max(state.running_max, abs(now)))


def _eps_at(epsilon, i):
    return float(epsilon[i]) if np.ndim(epsilon) else float(epsilon)


def detect_mutation(trace: Sequence[float], epsilon) -> int | None:
    """Index of the first positive-to-negative sign mutation, or None.

    A mutation at ``i`` needs ``trace[i] <= -eps`` while the latest earlier
    sample with ``|value| >= eps`` was positive; samples inside the
    ``(-eps, eps)`` dead band are skipped. ``epsilon`` may be a scalar or a
    per-sample sequence.
    """
    if np.ndim(epsilon) == 0 and not float(epsilon) > 0:
        raise InvalidInputError("epsilon must be positive")
    last_sign = 0
    for i, v in enumerate(trace):
        eps = _eps_at(epsilon, i)
        if v <= -eps:
            if last_sign > 0:
                return i
            last_sign = -1
        elif v >= eps:
            last_sign = 1
    return None


def direction_hint(trace_prefix: Sequence[float], epsilon: float,
                   min_samples: int = DEFAULT_MIN_SAMPLES, sign_z: float | None = None) -> str:
    """Motion direction from the median of the samples above the noise floor.

    Needs at least ``min_samples`` samples with ``|value| > epsilon``. With
    ``sign_z`` set, the positive/negative imbalance among those samples must
    also reach ``sign_z`` binomial standard deviations, so a zero-mean noise
    trace stays ``unknown``.
    """
    if min_samples < 1:
        raise InvalidInputError("min_samples must be >= 1")
    values = np.asarray(trace_prefix, dtype=np.float64)
    values = values[np.abs(values) > epsilon]
    if values.size < min_samples:
        return UNKNOWN
    med = float(np.median(values))
    if med == 0:
        return UNKNOWN
    if sign_z is not None:
        excess = abs(int(np.sum(values > 0)) - int(np.sum(values < 0)))
        if excess < sign_z * math.sqrt(values.size):
            return UNKNOWN
    return TOWARD if med > 0 else AWAY


def noise_scale(values: Sequence[float]) -> float:
    """Robust per-sample noise std from the MAD of successive differences."""
    d = np.abs(np.diff(np.asarray(values, dtype=np.float64)))
    return float(1.4826 * np.median(d) / math.sqrt(2.0)) if d.size else 0.0


@dataclass
class DetectorReport:
    stop_time: int | None
    estimated_focus_dv: float | None
    trace: list = field(default_factory=list)  # (t_us, raw, filtered)
    direction_reversals: int = 0
    verdict: str = NOT_FOUND
    first_hint: str = UNKNOWN
    epsilons: list = field(default_factory=list)

    @property
    def times(self):
        return np.array([r[0] for r in self.trace], dtype=np.int64)

    @property
    def raw(self):
        return np.array([r[1] for r in self.trace])

    @property
    def filtered(self):
        return np.array([r[2] for r in self.trace])


class ELPMonitor:
    """Online ELP state machine: filter, direction hint and mutation detector.

    Mutation detection arms (and stays armed until :meth:`reset`) once the
    hint over the samples seen so far reads ``toward``; before that a
    negative mutation-like pattern is noise at far defocus or evidence of
    moving away.
    """

    def __init__(self, fparams: FilterParams = FilterParams(), epsilon: float | None = None,
                 eps_frac: float = DEFAULT_EPS_FRAC, min_samples: int = DEFAULT_MIN_SAMPLES,
                 use_filter: bool = True, sign_z: float | None = DEFAULT_SIGN_Z,
                 noise_k: float | None = DEFAULT_NOISE_K):
        self.fparams = fparams
        self.noise_k = noise_k
        self.epsilon = epsilon
        self.eps_frac = eps_frac
        self.min_samples = min_samples
        self.use_filter = use_filter
        self.sign_z = sign_z
        self.reset()

    def reset(self):
        self.state = FilterState()
        self.times, self.raw, self.filtered, self.eps = [], [], [], []
        self.hint = UNKNOWN
        self.first_hint = UNKNOWN
        self._last_sign = 0
        self.armed = False
        self.mutation_index = None

    def update(self, t: int, raw: float) -> bool:
        """Feed one raw ELP sample; True when it completes a sign mutation."""
        if self.times and t <= self.times[-1]:
            raise InvalidInputError("ELP samples must arrive in increasing time order")
        if self.use_filter:
            filtered, self.state = filter_step(self.state, self.fparams, raw)
        else:
            filtered = float(raw)
            self.state = FilterState((), max(self.state.running_max, abs(raw)))
        eps = self.epsilon if self.epsilon is not None else self.eps_frac * self.state.running_max
        self.raw.append(float(raw))
        if self.noise_k is not None and self.epsilon is None and len(self.raw) > 2:
            eps = max(eps, self.noise_k * noise_scale(self.raw))
        # zero traces keep a relative epsilon at 0; nothing can be significant then
        eps = eps if eps > 0 else math.inf
        armed = self.armed
        self.times.append(int(t))
        self.filtered.append(filtered)
        self.eps.append(eps)
        mutated = False
        if filtered <= -eps:
            mutated = armed and self._last_sign > 0
            self._last_sign = -1
        elif filtered >= eps:
            self._last_sign = 1
        self.hint = direction_hint(self.filtered, eps, self.min_samples, self.sign_z)
        self.armed = self.armed or self.hint == TOWARD
        if self.first_hint == UNKNOWN:
            self.first_hint = self.hint
        if mutated and self.mutation_index is None:
            self.mutation_index = len(self.times) - 1
        return mutated

    def trace(self):
        return list(zip(self.times, self.raw, self.filtered))


class ELPDetector(BaseEstimator):
    """ELP focus detector over a recorded event stream.

    ``fit`` takes the reference grey frames ``[(t, image), ...]`` and caches
    their Laplacians; ``predict`` scans an event stream tick by tick and
    stops at the first sign mutation.
    """

    def __init__(self, dt=DEFAULT_DT, roi=None, window_w=10, smoothing_s=0.3,
                 thd_mode="relative", thd_value=0.25, epsilon=None,
                 eps_frac=DEFAULT_EPS_FRAC, min_samples=DEFAULT_MIN_SAMPLES,
                 sign_z=DEFAULT_SIGN_Z, noise_k=DEFAULT_NOISE_K, use_filter=True, use_laplacian=True):
        self.dt = dt
        self.roi = roi
        self.window_w = window_w
        self.smoothing_s = smoothing_s
        self.thd_mode = thd_mode
        self.thd_value = thd_value
        self.epsilon = epsilon
        self.eps_frac = eps_frac
        self.min_samples = min_samples
        self.sign_z = sign_z
        self.noise_k = noise_k
        self.use_filter = use_filter
        self.use_laplacian = use_laplacian

    @property
    def filter_params(self) -> FilterParams:
        return FilterParams(self.window_w, self.smoothing_s, self.thd_mode, self.thd_value)

    def make_monitor(self) -> ELPMonitor:
        return ELPMonitor(self.filter_params, self.epsilon, self.eps_frac, self.min_samples,
                          self.use_filter, self.sign_z, self.noise_k)

    def fit(self, ref_frames, y=None):
        if not len(ref_frames):
            raise InvalidInputError("need at least one reference frame")
        frames = sorted(((int(t), img) for t, img in ref_frames), key=lambda f: f[0])
        self.ref_times_ = np.array([t for t, _ in frames], dtype=np.int64)
        if self.use_laplacian:
            self.laplacians_ = np.stack([laplacian(img) for _, img in frames])
        else:
            self.laplacians_ = np.ones((1,) + np.asarray(frames[0][1]).shape)
            self.ref_times_ = self.ref_times_[:1]
        return self

    def raw_trace(self, stream: EventStream):
        """``(ticks, raw_elp)`` for every tick of ``stream``."""
        check_is_fitted(self)
        dt = int(self.dt)
        ticks = tick_times(stream, dt)
        if ticks.size and ticks[0] < self.ref_times_[0]:
            raise InvalidInputError("first reference frame is later than the first tick")
        h, w = self.laplacians_.shape[1:]
        if (stream.height, stream.width) != (h, w):
            raise InvalidInputError("reference frames and event stream differ in size")
        r = check_roi(self.roi, w, h)
        inside = (stream.t > stream.t_begin) & (stream.x >= r.x0) & (stream.x < r.x1) & \
                 (stream.y >= r.y0) & (stream.y < r.y1)
        x, y, t, p = stream.x[inside], stream.y[inside], stream.t[inside], stream.p[inside]
        k = (t - stream.t_begin + dt - 1) // dt  # tick number, 1-based
        valid = k <= ticks.size
        x, y, p, k = x[valid], y[valid], p[valid], k[valid]
        tick_ref = np.searchsorted(self.ref_times_, ticks, side="right") - 1
        ref = tick_ref[k - 1]
        contrib = -self.laplacians_[ref, y, x] * p
        raw = np.bincount(k - 1, weights=contrib, minlength=ticks.size)
        return ticks, raw

    def predict(self, stream: EventStream, dv_of_t=None) -> DetectorReport:
        ticks, raw = self.raw_trace(stream)
        mon = self.make_monitor()
        stop = None
        for t, v in zip(ticks.tolist(), raw.tolist()):
            if mon.update(t, v):
                stop = t
                break
        dv = None if stop is None or dv_of_t is None else float(dv_of_t(stop))
        return DetectorReport(stop, dv, mon.trace(), 0, FOCUSED if stop is not None else NOT_FOUND,
                              mon.first_hint, list(mon.eps))


def run_elp_stream(events: EventStream, ref_frames, roi=None, dt: int = DEFAULT_DT,
                   fparams: FilterParams = FilterParams(), epsilon=None, dv_of_t=None,
                   **kwargs) -> DetectorReport:
    det = ELPDetector(dt=dt, roi=roi, window_w=fparams.window_w, smoothing_s=fparams.smoothing_s,
                      thd_mode=fparams.thd_mode, thd_value=fparams.thd_value, epsilon=epsilon,
                      **kwargs)
    return det.fit(ref_frames).predict(events, dv_of_t)


def golden_section_argmax(values: Sequence[float]) -> int:
    """Golden-section search for the maximum of a sequence assumed unimodal.

    Converges to an interval of at most 3 ticks and returns its earliest
    maximum. On multimodal data it may settle on a local peak.
    """
    values = np.asarray(values, dtype=np.float64)
    a, b = 0, values.size - 1
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    while b - a > 2:
        r = int(math.ceil(inv_phi * (b - a) - 1e-12))
        c, d = b - r, a + r
        if values[c] >= values[d]:
            b = d
        else:
            a = c
    return a + int(np.argmax(values[a:b + 1]))


class EGSLocator(BaseEstimator):
    """Focus at the maximum event rate over a full focus stack."""

    def __init__(self, dt=DEFAULT_DT, mode="golden"):
        self.dt = dt
        self.mode = mode

    def fit(self, stream: EventStream, y=None):
        if self.mode not in ("scan", "golden"):
            raise InvalidInputError(f"unknown EGS mode {self.mode!r}")
        ticks, pos, neg = rate_curves(stream, int(self.dt))
        if ticks.size < 3:
            raise InvalidInputError("EGS needs a stream spanning at least 3 windows")
        self.ticks_ = ticks
        self.rate_ = pos + neg
        if not np.any(self.rate_ > 0):
            self.focus_index_ = None
        elif self.mode == "scan":
            self.focus_index_ = int(np.argmax(self.rate_))
        else:
            self.focus_index_ = golden_section_argmax(self.rate_)
        self.focus_time_ = None if self.focus_index_ is None else int(ticks[self.focus_index_])
        return self

    def predict(self, stream: EventStream):
        return self.fit(stream).focus_time_


def egs_locate(events: EventStream, dt: int = DEFAULT_DT, mode: str = "golden"):
    return EGSLocator(dt, mode).fit(events).focus_time_


def mirror_scores(pos, neg, min_span: int):
    """Normalised mirrored mismatch ``sum (pos[c+k]-neg[c-k])^2 / sum (pos^2+neg^2)``.

    Centres whose largest symmetric span is below ``min_span`` score ``inf``.
    """
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    n = pos.size
    scores = np.full(n, np.inf)
    for c in range(n):
        span = min(c, n - 1 - c)
        if span < min_span:
            continue
        k = np.arange(-span, span + 1)
        a, b = pos[c + k], neg[c - k]
        energy = np.sum(a * a + b * b)
        if energy > 0:
            scores[c] = np.sum((a - b) ** 2) / energy
    return scores


class PBFLocator(BaseEstimator):
    """Focus at the centre of mirror symmetry between positive and negative rates.

    ``min_span`` (ticks) keeps candidate centres away from the stack ends,
    where a tiny symmetric span would match trivially; ``None`` uses a
    quarter of the stack.
    """

    def __init__(self, dt=DEFAULT_DT, min_span=None):
        self.dt = dt
        self.min_span = min_span

    def fit(self, stream: EventStream, y=None):
        ticks, pos, neg = rate_curves(stream, int(self.dt))
        if ticks.size < 5:
            raise InvalidInputError("PBF needs a stream spanning at least 5 windows")
        return self.fit_curves(ticks, pos, neg)

    def fit_curves(self, ticks, pos, neg):
        self.ticks_ = np.asarray(ticks)
        self.pos_rate_ = np.asarray(pos, dtype=np.float64)
        self.neg_rate_ = np.asarray(neg, dtype=np.float64)
        n = self.ticks_.size
        min_span = max(1, n // 4) if self.min_span is None else int(self.min_span)
        self.scores_ = mirror_scores(self.pos_rate_, self.neg_rate_, min(min_span, (n - 1) // 2))
        if not (np.any(self.pos_rate_) or np.any(self.neg_rate_)) or not np.isfinite(self.scores_).any():
            self.focus_index_ = None
            self.focus_time_ = None
        else:
            self.focus_index_ = int(np.argmin(self.scores_))
            self.focus_time_ = int(self.ticks_[self.focus_index_])
        return self

    def predict(self, stream: EventStream):
        return self.fit(stream).focus_time_


def pbf_locate(events: EventStream, dt: int = DEFAULT_DT, min_span=None):
    return PBFLocator(dt, min_span).fit(events).focus_time_


def write_trace_csv(path, trace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_us", "raw_elp", "filtered_elp"])
        for t, raw, filt in trace:
            w.writerow([int(t), repr(float(raw)), repr(float(filt))])


def read_trace_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [(int(r["t_us"]), float(r["raw_elp"]), float(r["filtered_elp"])) for r in rows]
