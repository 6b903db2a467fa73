"""Flat ``key = value`` scenario configuration files.

Keys carry their units in the name (``motor_speed_um_per_s``). ``#`` starts a
comment. The keys ``scene_path``, ``motion``, ``fps`` and ``start_dv_um``
accept comma-separated lists, expanded into the cartesian product of
scenarios. Vectors (per-axis motion speeds) are whitespace separated.
``scene_path = builtin:<name>`` renders one of :mod:`elpaf.scenes`.
"""

from __future__ import annotations

import itertools
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from ..afloop import MotorModel
from ..detectors import ELPDetector, FilterParams
from ..exceptions import ConfigError
from ..optics import MOTION_PRESETS, MotionParams, PsfModel

SEED_ENV = "ELP_AF_SEED"
LIST_KEYS = ("scene_path", "motion", "fps", "start_dv_um")


@dataclass(frozen=True)
class ScenarioConfig:
    scene_path: str = "builtin:checker"
    scene_size_px: int = 192
    psf: str = "gaussian"
    psf_sigma_max_px: float = 400.0
    psf_dv_max_um: float = 400.0
    motion: str = "static"
    motion_v_motion_px_per_s: tuple = (0.0, 0.0)
    motion_v_jitter_px_per_s: tuple = (0.0, 0.0)
    fps: float = 50.0
    contrast_c: float = 0.2
    log_floor: float = 1.0
    event_dt_us: int = 1000
    frame_period_us: int = 1000
    filter_window_w: int = 10
    filter_smoothing_s: float = 0.3
    filter_thd_mode: str = "relative"
    filter_thd_value: float = 0.25
    eps_frac: float = 0.02
    motor_speed_um_per_s: float = 800.0
    motor_dv_min_um: float = -400.0
    motor_dv_max_um: float = 400.0
    motor_reversal_latency_us: int = 5000
    start_dv_um: float = -400.0
    initial_direction: str = "toward"
    noise_rate_hz: float = 0.0
    seed: int = 0
    dof_um: float = 16.0

    def __post_init__(self):
        if self.motion not in MOTION_PRESETS and self.motion != "custom":
            raise ConfigError(f"motion must be one of {sorted(MOTION_PRESETS)} or custom")
        if self.psf != "gaussian" and not self.psf.startswith("stack:"):
            raise ConfigError("psf must be 'gaussian' or 'stack:<dir>'")
        if self.initial_direction not in ("toward", "away"):
            raise ConfigError("initial_direction must be toward or away")
        if not self.fps > 0 or self.event_dt_us <= 0 or self.frame_period_us <= 0:
            raise ConfigError("fps, event_dt_us and frame_period_us must be positive")
        if self.event_dt_us % self.frame_period_us:
            raise ConfigError("event_dt_us must be a multiple of frame_period_us")
        try:
            self.motor()
            self.filter_params()
            PsfModel.gaussian(self.psf_sigma_max_px, self.psf_dv_max_um)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def scene_name(self) -> str:
        if self.scene_path.startswith("builtin:"):
            return self.scene_path.split(":", 1)[1]
        return Path(self.scene_path).stem

    @property
    def scenario_id(self) -> str:
        return (f"{self.scene_name}_{self.motion}_{self.fps:g}fps_"
                f"{self.start_dv_um:+g}um_s{self.seed}")

    def motion_params(self) -> MotionParams:
        if self.motion == "custom":
            return MotionParams(self.motion_v_motion_px_per_s, self.motion_v_jitter_px_per_s,
                                self.seed)
        vm, vj = MOTION_PRESETS[self.motion]
        return MotionParams(vm, vj, self.seed)

    @property
    def noise_seed(self) -> int:
        return self.seed + 1

    def motor(self) -> MotorModel:
        return MotorModel(self.motor_speed_um_per_s, (self.motor_dv_min_um, self.motor_dv_max_um),
                          self.motor_reversal_latency_us)

    def filter_params(self) -> FilterParams:
        return FilterParams(self.filter_window_w, self.filter_smoothing_s, self.filter_thd_mode,
                            self.filter_thd_value)

    def psf_model(self, base_dir: Path | None = None) -> PsfModel:
        if self.psf == "gaussian":
            return PsfModel.gaussian(self.psf_sigma_max_px, self.psf_dv_max_um)
        path = Path(self.psf.split(":", 1)[1])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return PsfModel.load_stack(path)

    def detector(self, method: str = "ELP") -> ELPDetector:
        fp = self.filter_params()
        return ELPDetector(dt=self.event_dt_us, window_w=fp.window_w, smoothing_s=fp.smoothing_s,
                           thd_mode=fp.thd_mode, thd_value=fp.thd_value, eps_frac=self.eps_frac,
                           use_filter=method != "ELP_no_filter",
                           use_laplacian=method != "ELP_no_laplacian")

    def to_text(self) -> str:
        lines = []
        for k, v in asdict(self).items():
            if isinstance(v, tuple):
                v = " ".join(f"{x:g}" for x in v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


_FIELDS = {f.name: f for f in fields(ScenarioConfig)}


def _convert(key: str, raw: str):
    default = _FIELDS[key].default
    try:
        if isinstance(default, tuple):
            vals = tuple(float(v) for v in raw.split())
            if len(vals) != 2:
                raise ValueError("expected two values")
            return vals
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None
    return raw


def parse_config_text(text: str) -> dict:
    """Parse key/value lines into ``{key: [raw values]}``."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        values = [v.strip() for v in value.split(",")] if key in LIST_KEYS else [value]
        if not all(values):
            raise ConfigError(f"line {n}: empty value for {key!r}")
        out[key] = values
    return out


def _seed_override():
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def expand_config(parsed: dict, base_dir: Path | None = None,
                  env_seed: bool = True) -> list[ScenarioConfig]:
    """Cartesian expansion of list-valued keys.

    Relative scene and PSF paths resolve against ``base_dir``. With
    ``env_seed`` the ``ELP_AF_SEED`` environment variable replaces every seed.
    """
    keys = list(parsed)
    combos = itertools.product(*(parsed[k] for k in keys))
    seed = _seed_override() if env_seed else None
    configs = []
    for combo in combos:
        kw = {k: _convert(k, v) for k, v in zip(keys, combo)}
        path = kw.get("scene_path")
        if path and base_dir is not None and not path.startswith("builtin:") \
                and not Path(path).is_absolute():
            kw["scene_path"] = str(base_dir / path)
        psf = kw.get("psf", "")
        if psf.startswith("stack:") and base_dir is not None \
                and not Path(psf[6:]).is_absolute():
            kw["psf"] = "stack:" + str(base_dir / psf[6:])
        if seed is not None:
            kw["seed"] = seed
        configs.append(ScenarioConfig(**kw))
    return configs


def load_configs(path) -> list[ScenarioConfig]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return expand_config(parse_config_text(text), path.parent)


def with_seed(cfg: ScenarioConfig, seed: int) -> ScenarioConfig:
    return replace(cfg, seed=int(seed))
