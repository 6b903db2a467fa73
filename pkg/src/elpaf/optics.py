"""Defocus rendering: PSF models, sweeps along a defocus trajectory, and the
analytic Gaussian-derivative helpers used as test oracles.

Images are plain 2-D ``float64`` arrays (row-major, ``image[y, x]``) holding
linear intensity. Scenes live on the render grid, which is three times finer
than the sensor grid; observations are box-downsampled by 3.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np
from scipy import ndimage as ndi
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import InvalidInputError, OutOfRangeError, UnsupportedOperationError
from .imageio import read_matrix, write_matrix
from .validation import check_image, check_positive

DOWNSAMPLE = 3
IDENTITY_SIGMA = 0.3  # px; narrower Gaussians render as a Dirac
KERNEL_RADIUS_SIGMAS = 4.0
DEFAULT_SIGMA_MAX = 400.0  # render-grid px at |dv| = dv_max
DEFAULT_DV_MAX = 400.0  # um
DEFAULT_SPEED_UM_PER_US = 800e-6  # 800 um/s: the full +-400 um stack in 1 s
S_SIGN_EPSILON = 1e-9


@dataclass(frozen=True)
class PsfModel:
    """Gaussian or tabulated (stack) point spread function along defocus."""

    kind: str = "gaussian"
    sigma_max: float = DEFAULT_SIGMA_MAX
    dv_max: float = DEFAULT_DV_MAX
    stack_dvs: np.ndarray | None = field(default=None, repr=False)
    stack_kernels: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind == "gaussian":
            check_positive(self.sigma_max, "sigma_max")
            check_positive(self.dv_max, "dv_max")
        elif self.kind == "stack":
            dvs = np.asarray(self.stack_dvs, dtype=np.float64)
            kernels = tuple(np.asarray(k, dtype=np.float64) for k in self.stack_kernels or ())
            if dvs.ndim != 1 or dvs.size == 0 or dvs.size != len(kernels):
                raise InvalidInputError("stack needs one kernel per dv value")
            if np.any(np.diff(dvs) <= 0):
                raise InvalidInputError("stack dv values must be strictly increasing")
            for dv, k in zip(dvs, kernels):
                if k.ndim != 2 or k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0:
                    raise InvalidInputError(f"kernel at dv={dv} must have odd square support")
                if abs(k.sum() - 1.0) > 1e-6:
                    raise InvalidInputError(f"kernel at dv={dv} sums to {k.sum()}, expected 1")
                if np.any(~np.isfinite(k)):
                    raise InvalidInputError(f"kernel at dv={dv} has non-finite entries")
            object.__setattr__(self, "stack_dvs", dvs)
            object.__setattr__(self, "stack_kernels", kernels)
        else:
            raise InvalidInputError(f"unknown PSF kind {self.kind!r}")

    @classmethod
    def gaussian(cls, sigma_max: float = DEFAULT_SIGMA_MAX, dv_max: float = DEFAULT_DV_MAX):
        return cls("gaussian", float(sigma_max), float(dv_max))

    @classmethod
    def from_stack(cls, dvs: Sequence[float], kernels: Sequence[np.ndarray]):
        dvs = np.asarray(dvs, dtype=np.float64)
        return cls("stack", 0.0, float(np.max(np.abs(dvs))), dvs, tuple(kernels))

    @classmethod
    def load_stack(cls, directory) -> "PsfModel":
        """Read ``index.txt`` plus one ``psf_<dv>.txt`` matrix per listed dv."""
        directory = Path(directory)
        index = directory / "index.txt"
        if not index.exists():
            raise InvalidInputError(f"{directory}: missing index.txt")
        tokens = [line.strip() for line in index.read_text().splitlines() if line.strip()]
        kernels = []
        for tok in tokens:
            path = directory / f"psf_{tok}.txt"
            if not path.exists():
                raise InvalidInputError(f"{directory}: missing {path.name}")
            kernels.append(read_matrix(path))
        return cls.from_stack([float(t) for t in tokens], kernels)

    def save_stack(self, directory) -> None:
        if self.kind != "stack":
            raise UnsupportedOperationError("only stack PSF models can be saved")
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        names = [_format_dv(dv) for dv in self.stack_dvs]
        (directory / "index.txt").write_text("".join(n + "\n" for n in names))
        for name, kernel in zip(names, self.stack_kernels):
            write_matrix(directory / f"psf_{name}.txt", kernel)


def _format_dv(dv: float) -> str:
    return f"{dv:g}"


@dataclass(frozen=True)
class MotionParams:
    """Per-axis constant drift and jitter, both in render-grid px/s."""

    v_motion: tuple = (0.0, 0.0)
    v_jitter: tuple = (0.0, 0.0)
    seed: int = 0

    def __post_init__(self):
        vm = tuple(float(v) for v in self.v_motion)
        vj = tuple(float(v) for v in self.v_jitter)
        if len(vm) != 2 or len(vj) != 2:
            raise InvalidInputError("motion parameters are per-axis 2-vectors")
        if min(vj) < 0:
            raise InvalidInputError("v_jitter components must be >= 0")
        object.__setattr__(self, "v_motion", vm)
        object.__setattr__(self, "v_jitter", vj)

    @property
    def is_static(self) -> bool:
        return not any(self.v_motion) and not any(self.v_jitter)

    def displacements(self, frame_period_us: float) -> Iterator[np.ndarray]:
        """Endless stream of independent per-frame (dx, dy) displacements."""
        rng = np.random.default_rng(self.seed)
        dt = frame_period_us * 1e-6
        mean = np.asarray(self.v_motion) * dt
        std = np.asarray(self.v_jitter) * dt
        while True:
            yield rng.normal(mean, std)


MOTION_PRESETS = {
    "static": ((0.0, 0.0), (0.0, 0.0)),
    "moderate": ((3.0, 3.0), (20.0, 20.0)),
    "violent": ((3.0, 3.0), (100.0, 100.0)),
}


def motion_preset(name: str, seed: int = 0) -> MotionParams:
    try:
        vm, vj = MOTION_PRESETS[name]
    except KeyError:
        raise InvalidInputError(f"unknown motion preset {name!r}") from None
    return MotionParams(vm, vj, seed)


@dataclass(frozen=True)
class DefocusSweep:
    """Piecewise-linear defocus trajectory sampled every ``frame_period`` us."""

    knots_t: tuple
    knots_dv: tuple
    frame_period: int = 1000
    motion: MotionParams = MotionParams()

    def __post_init__(self):
        t = np.asarray(self.knots_t, dtype=np.float64)
        if t.size < 2 or t.size != len(self.knots_dv) or np.any(np.diff(t) <= 0) or t[0] != 0:
            raise InvalidInputError("sweep knots must start at t=0 and increase strictly")
        if int(self.frame_period) != self.frame_period or self.frame_period <= 0:
            raise InvalidInputError("frame_period must be a positive integer (us)")
        if self.duration / self.frame_period < 2:
            raise InvalidInputError("sweep must span at least two frame periods")

    @classmethod
    def linear(cls, dv_start: float, dv_end: float, duration: int = 1_000_000,
               frame_period: int = 1000, motion: MotionParams = MotionParams()):
        return cls((0.0, float(duration)), (float(dv_start), float(dv_end)),
                   int(frame_period), motion)

    @property
    def duration(self) -> float:
        return float(self.knots_t[-1])

    @property
    def n_frames(self) -> int:
        return int(self.duration // self.frame_period) + 1

    def frame_times(self) -> np.ndarray:
        return np.arange(self.n_frames, dtype=np.int64) * int(self.frame_period)

    def dv_at(self, t):
        return np.interp(t, self.knots_t, self.knots_dv)

    def focus_time(self) -> float | None:
        """First time the trajectory crosses dv = 0, by linear interpolation."""
        t = np.asarray(self.knots_t, dtype=np.float64)
        dv = np.asarray(self.knots_dv, dtype=np.float64)
        for i in range(len(t) - 1):
            if dv[i] == 0:
                return float(t[i])
            if dv[i] * dv[i + 1] < 0 or dv[i + 1] == 0:
                return float(t[i] + (t[i + 1] - t[i]) * dv[i] / (dv[i] - dv[i + 1]))
        return None


class Observation(NamedTuple):
    t: int
    image: np.ndarray
    dv: float
    shift: tuple


def sigma_of_defocus(model: PsfModel, dv: float) -> float:
    """Gaussian blur width (render-grid px), linear in ``|dv|``."""
    if model.kind != "gaussian":
        raise UnsupportedOperationError("sigma_of_defocus needs a gaussian PSF model")
    return model.sigma_max * abs(float(dv)) / model.dv_max


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    if sigma < IDENTITY_SIGMA:
        return np.ones(1)
    radius = int(np.ceil(KERNEL_RADIUS_SIGMAS * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def kernel_at(model: PsfModel, dv: float) -> np.ndarray:
    """Normalised 2-D blur kernel at defocus ``dv``."""
    if model.kind == "gaussian":
        g = gaussian_kernel_1d(sigma_of_defocus(model, dv))
        k = np.outer(g, g)
        return k / k.sum()
    dvs = model.stack_dvs
    if not dvs[0] - 1e-9 <= dv <= dvs[-1] + 1e-9:
        raise OutOfRangeError(f"dv={dv} outside PSF stack range [{dvs[0]}, {dvs[-1]}]")
    return model.stack_kernels[_nearest_index(dvs, dv)]


def _nearest_index(values: np.ndarray, v: float) -> int:
    i = int(np.searchsorted(values, v))
    if i == 0:
        return 0
    if i == len(values):
        return len(values) - 1
    return i if values[i] - v < v - values[i - 1] else i - 1


def _periodic_kernel(kernel_1d: np.ndarray, period: int) -> np.ndarray:
    radius = kernel_1d.size // 2
    out = np.zeros(period)
    np.add.at(out, np.arange(-radius, radius + 1) % period, kernel_1d)
    return out


def convolve_reflect_1d(image: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    """Convolution along one axis with half-sample symmetric ('reflect') borders.

    Equivalent to ``scipy.ndimage.convolve1d(..., mode='reflect')`` for any
    kernel length, in O(n log n): the mirrored signal is 2n-periodic, so the
    convolution becomes circular against the periodised kernel.
    """
    n = image.shape[axis]
    ext = np.concatenate([image, np.flip(image, axis=axis)], axis=axis)
    spectrum = np.fft.rfft(_periodic_kernel(kernel, 2 * n))
    shape = [1] * image.ndim
    shape[axis] = -1
    out = np.fft.irfft(np.fft.rfft(ext, axis=axis) * spectrum.reshape(shape), n=2 * n, axis=axis)
    return np.take(out, np.arange(n), axis=axis)


def convolve_reflect_2d(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """2-D counterpart of :func:`convolve_reflect_1d` for non-separable kernels."""
    h, w = image.shape
    ext = np.concatenate([image, image[::-1]], axis=0)
    ext = np.concatenate([ext, ext[:, ::-1]], axis=1)
    ry, rx = kernel.shape[0] // 2, kernel.shape[1] // 2
    kp = np.zeros((2 * h, 2 * w))
    yy, xx = np.meshgrid(np.arange(-ry, ry + 1) % (2 * h), np.arange(-rx, rx + 1) % (2 * w),
                         indexing="ij")
    np.add.at(kp, (yy, xx), kernel)
    out = np.fft.irfft2(np.fft.rfft2(ext) * np.fft.rfft2(kp), s=ext.shape)
    return out[:h, :w]


def translate(image: np.ndarray, shift) -> np.ndarray:
    """Bilinear translation by ``(dx, dy)`` render-grid px, clamping at the edges."""
    dx, dy = float(shift[0]), float(shift[1])
    if dx == 0 and dy == 0:
        return image
    return ndi.shift(image, (dy, dx), order=1, mode="nearest", prefilter=False)


def box_downsample(image: np.ndarray, factor: int = DOWNSAMPLE) -> np.ndarray:
    h, w = image.shape
    return image.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))


def render_observation(scene, model: PsfModel, dv: float, shift=(0.0, 0.0)) -> np.ndarray:
    """Translate, blur and 3x downsample ``scene`` as seen at defocus ``dv``."""
    scene = check_image(scene, divisible_by=DOWNSAMPLE, name="scene")
    img = translate(scene, shift)
    if model.kind == "gaussian":
        g = gaussian_kernel_1d(sigma_of_defocus(model, dv))
        if g.size > 1:
            img = convolve_reflect_1d(convolve_reflect_1d(img, g, 0), g, 1)
    else:
        k = kernel_at(model, dv)
        if k.size > 1:
            img = convolve_reflect_2d(img, k)
    # FFT round-off can leave -1e-13 on black pixels
    return np.maximum(box_downsample(img), 0.0)


def iter_sweep(scene, model: PsfModel, sweep: DefocusSweep) -> Iterator[Observation]:
    """Lazily render one observation per frame tick (both endpoints included)."""
    scene = check_image(scene, divisible_by=DOWNSAMPLE, name="scene")
    steps = sweep.motion.displacements(sweep.frame_period)
    shift = np.zeros(2)
    for k, t in enumerate(sweep.frame_times()):
        if k:
            shift = shift + next(steps)
        dv = float(sweep.dv_at(t))
        sh = (float(shift[0]), float(shift[1]))
        yield Observation(int(t), render_observation(scene, model, dv, sh), dv, sh)


def render_sweep(scene, model: PsfModel, sweep: DefocusSweep) -> list[Observation]:
    return list(iter_sweep(scene, model, sweep))


class SweepRenderer(TransformerMixin, BaseEstimator):
    """Transformer turning a sharp scene into a list of defocused observations.

    Composes with :class:`elpaf.eventsim.EventSimulator` in a scikit-learn
    pipeline: ``make_pipeline(SweepRenderer(...), EventSimulator())``.
    """

    def __init__(self, psf: PsfModel | None = None, sweep: DefocusSweep | None = None):
        self.psf = psf
        self.sweep = sweep

    def fit(self, X=None, y=None):
        self.psf_ = self.psf if self.psf is not None else PsfModel.gaussian()
        self.sweep_ = self.sweep if self.sweep is not None else DefocusSweep.linear(
            -DEFAULT_DV_MAX, DEFAULT_DV_MAX)
        return self

    def transform(self, X):
        if not hasattr(self, "psf_"):
            self.fit()
        return render_sweep(X, self.psf_, self.sweep_)


def gaussian_1d(x, sigma):
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-0.5 * (x / sigma) ** 2) / (np.sqrt(2 * np.pi) * sigma)


def dh_dt_analytic(x, sigma: float, alpha: float):
    """Time derivative of a unit 1-D Gaussian whose variance grows as ``alpha * t``."""
    if not sigma > 0:
        raise InvalidInputError(f"sigma must be positive, got {sigma}")
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * alpha * gaussian_1d(x, sigma) * (x ** 2 / sigma ** 4 - 1.0 / sigma ** 2)


def s_of_t_discrete(scene, model: PsfModel, dv: float, alpha_sign: int, dt_probe: float,
                    speed: float = DEFAULT_SPEED_UM_PER_US) -> float:
    """Discrete focus-sign functional ``-sum(dG/dt * lap(G))`` at defocus ``dv``.

    The second observation is rendered at the defocus whose variance is
    ``sigma(dv)**2 + alpha_sign * |d sigma^2/dt| * dt_probe``, with the variance
    rate implied by moving ``|dv|`` at ``speed`` (um/us). Approaching focus
    (``alpha_sign=-1``) gives a positive value, receding a negative one;
    values with magnitude below ``S_SIGN_EPSILON`` carry no sign information.
    """
    from .detectors import laplacian

    if dv == 0:
        raise InvalidInputError("s_of_t_discrete is undefined at dv = 0")
    if alpha_sign not in (-1, 1):
        raise InvalidInputError("alpha_sign must be -1 or +1")
    check_positive(dt_probe, "dt_probe")
    sigma0 = sigma_of_defocus(model, dv)
    rate = 2.0 * sigma0 * model.sigma_max / model.dv_max * speed
    sigma1 = np.sqrt(max(sigma0 ** 2 + alpha_sign * rate * dt_probe, 0.0))
    dv1 = np.sign(dv) * sigma1 * model.dv_max / model.sigma_max
    g0 = render_observation(scene, model, dv)
    g1 = render_observation(scene, model, dv1)
    return float(-np.sum((g1 - g0) / dt_probe * laplacian(g0)))
