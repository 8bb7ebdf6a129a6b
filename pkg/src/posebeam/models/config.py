"""
Run configuration: one JSON file with "pipeline", "train" and "simulation" sections.

Keys are kebab-case versions of the dataclass field names. Unknown keys and
invalid values raise ConfigError before anything runs; a few legacy key names
are migrated on load.
"""
import dataclasses
import hashlib
import json
import logging
import os
import pathlib
import types
import typing as t
from dataclasses import dataclass

from .signals import DEFAULT_SAMPLE_RATE, StftConfig
from ..simulation.trajectory import PoseMarkovModel

logger = logging.getLogger(__name__)

ENHANCERS = ("echoic_irm", "anechoic_irm", "oracle", "lstm256", "lstm512")
ESTIMATORS = ("none", "fixed", "buffer", "rank1", "cholesky", "arbitrary")
LEARNED_ESTIMATORS = ("rank1", "cholesky", "arbitrary")
STEERING_MODES = ("auto", "first_column", "principal")
TRAIN_TARGETS = ("estimator", "enhancer", "joint")
SECTIONS = ("pipeline", "train", "simulation")

# old key -> new key, per section
_LEGACY_KEYS: dict[str, dict[str, str]] = {
    "pipeline": {"buffer": "buffer-frames", "window": "window-len", "hidden": "hidden-size", "finfo": "f-info"},
    "train": {"epochs": "max-epochs", "learning-rate": "lr", "clip": "clip-norm"},
    "simulation": {"snapshots": "num-snapshots", "rotations": "num-snapshots"},
}

ENV_NUM_THREADS = "POSEBEAM_NUM_THREADS"
ENV_LOG_LEVEL = "POSEBEAM_LOG_LEVEL"


class ConfigError(ValueError):
    def __init__(self, key: str, details: str):
        self.key = key
        self.details = details
        super().__init__(f"Invalid configuration '{key}': {details}")


def _require(condition: bool, key: str, details: str) -> None:
    if not condition:
        raise ConfigError(key, details)


@dataclass(frozen=True)
class PipelineConfig:
    """Enhancer, estimator and beamformer selection for one pipeline."""
    window_len: int = 512
    hop: int = 256
    enhancer: str = "oracle"
    irm_kind: str = "magnitude"
    enhancer_hidden: int | None = None
    estimator: str = "rank1"
    buffer_frames: int = 10
    hidden_size: int = 128
    num_layers: int = 2
    f_info: bool = True
    f_info_channels: int = 64
    rank1_init: float = 1e-3
    steering: str = "auto"
    weights: str | None = None
    enhancer_weights: str | None = None
    manifest: str | None = None
    seed: int = 0
    precision: str = "float32"

    def __post_init__(self):
        _require(self.enhancer in ENHANCERS, "enhancer", f"expected one of {ENHANCERS}, got {self.enhancer!r}")
        _require(self.estimator in ESTIMATORS, "estimator", f"expected one of {ESTIMATORS}, got {self.estimator!r}")
        _require(self.steering in STEERING_MODES, "steering", f"expected one of {STEERING_MODES}")
        _require(self.irm_kind in ("magnitude", "power"), "irm-kind", "expected 'magnitude' or 'power'")
        _require(self.precision in ("float32", "float64"), "precision", "expected 'float32' or 'float64'")
        _require(1 <= self.buffer_frames, "buffer-frames", "must be >= 1")
        _require(self.hidden_size >= 1, "hidden-size", "must be >= 1")
        _require(self.num_layers >= 1, "num-layers", "must be >= 1")
        _require(self.f_info_channels >= 1, "f-info-channels", "must be >= 1")
        _require(self.rank1_init > 0, "rank1-init", "must be positive")
        _require(self.enhancer_hidden is None or self.enhancer_hidden >= 1, "enhancer-hidden", "must be >= 1")
        try:
            self.stft
        except ValueError as e:
            raise ConfigError("window-len", str(e)) from e

    @property
    def stft(self) -> StftConfig:
        return StftConfig(window_len=self.window_len, hop=self.hop)

    @property
    def is_learned(self) -> bool:
        return self.estimator in LEARNED_ESTIMATORS

    @property
    def uses_lstm_enhancer(self) -> bool:
        return self.enhancer.startswith("lstm")

    @property
    def steering_mode(self) -> str:
        """Learned estimators steer on the first column, classical ones on the principal component."""
        if self.steering != "auto":
            return self.steering
        return "first_column" if self.is_learned else "principal"

    def with_updates(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return _to_kebab_dict(self)

    def config_hash(self) -> str:
        """Short SHA-256 of the effective configuration, excluding the dataset location."""
        data = self.to_dict()
        data.pop("manifest", None)
        canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-4
    batch_size: int = 8
    max_epochs: int = 50
    patience: int = 5
    clip_norm: float = 5.0
    target: str = "estimator"
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    max_train_scenes: int | None = None
    max_val_scenes: int | None = None

    def __post_init__(self):
        _require(self.lr >= 0, "lr", "must be non-negative")
        _require(self.batch_size >= 1, "batch-size", "must be >= 1")
        _require(self.max_epochs >= 1, "max-epochs", "must be >= 1")
        _require(1 <= self.patience <= self.max_epochs, "patience", "must be in [1, max-epochs]")
        _require(self.clip_norm > 0, "clip-norm", "must be positive (use a large value to disable)")
        _require(self.target in TRAIN_TARGETS, "target", f"expected one of {TRAIN_TARGETS}")
        _require(len(self.betas) == 2 and all(0 <= b < 1 for b in self.betas), "betas", "two values in [0, 1)")
        _require(self.eps > 0, "eps", "must be positive")
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))

    def to_dict(self) -> dict:
        return _to_kebab_dict(self)


@dataclass(frozen=True)
class SimulationConfig:
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE
    scene_duration_s: float = 5.0
    num_mics: int = 6
    array_diameter_m: float = 0.07
    num_snapshots: int = 250
    dynamic: bool = True
    dims_range_m: tuple[float, float] = (4.0, 8.0)
    t60_range_s: tuple[float, float] = (0.25, 0.75)
    snr_range_db: tuple[float, float] = (-5.0, 5.0)
    noise_sources_range: tuple[int, int] = (1, 3)
    wall_margin_m: float = 0.5
    crossfade: int = 256
    max_order: int | None = None
    split_fractions: tuple[float, float, float] = (2 / 3, 1 / 6, 1 / 6)
    speech_dir: str | None = None
    noise_dir: str | None = None
    pose_transition_matrix: tuple[tuple[float, ...], ...] = ((0.95, 0.025, 0.025),
                                                              (0.025, 0.95, 0.025),
                                                              (0.025, 0.025, 0.95))
    pose_speed_range_rad_s: tuple[float, float] = (0.5, 2.5)
    pose_initial_probs: tuple[float, float, float] = (0.6, 0.2, 0.2)
    pose_step_s: float = 0.02

    def __post_init__(self):
        _require(self.sample_rate_hz > 0, "sample-rate-hz", "must be positive")
        _require(self.scene_duration_s > 0, "scene-duration-s", "must be positive")
        _require(self.num_mics >= 1, "num-mics", "must be >= 1")
        _require(self.array_diameter_m > 0, "array-diameter-m", "must be positive")
        _require(self.num_snapshots >= 1, "num-snapshots", "must be >= 1")
        for key, (lo, hi) in (("dims-range-m", self.dims_range_m), ("t60-range-s", self.t60_range_s),
                              ("snr-range-db", self.snr_range_db), ("noise-sources-range", self.noise_sources_range)):
            _require(lo <= hi, key, f"lower bound {lo} exceeds upper bound {hi}")
        _require(4.0 <= self.dims_range_m[0] and self.dims_range_m[1] <= 8.0, "dims-range-m", "must lie in [4, 8] m")
        _require(0.25 <= self.t60_range_s[0] and self.t60_range_s[1] <= 0.75, "t60-range-s",
                 "must lie in [0.25, 0.75] s")
        _require(-5.0 <= self.snr_range_db[0] and self.snr_range_db[1] <= 5.0, "snr-range-db",
                 "must lie in [-5, 5] dB")
        _require(self.noise_sources_range[0] >= 1, "noise-sources-range", "at least one noise source")
        _require(0 < self.wall_margin_m < 2.0, "wall-margin-m", "must be in (0, 2) m")
        _require(self.crossfade >= 0, "crossfade", "must be non-negative")
        _require(self.max_order is None or self.max_order >= 0, "max-order", "must be non-negative")
        _require(len(self.split_fractions) == 3 and all(f >= 0 for f in self.split_fractions)
                 and abs(sum(self.split_fractions) - 1.0) < 1e-9, "split-fractions",
                 "three non-negative fractions summing to 1")
        try:
            self.pose_model
        except ValueError as e:
            raise ConfigError("pose-transition-matrix", str(e)) from e

    @property
    def num_samples(self) -> int:
        return int(round(self.scene_duration_s * self.sample_rate_hz))

    @property
    def pose_model(self) -> PoseMarkovModel:
        return PoseMarkovModel(transition_matrix=self.pose_transition_matrix,
                               speed_range_rad_s=self.pose_speed_range_rad_s,
                               initial_probs=self.pose_initial_probs, step_s=self.pose_step_s)

    def to_dict(self) -> dict:
        return _to_kebab_dict(self)


def _to_kebab_dict(obj) -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        if isinstance(value, tuple):
            value = json.loads(json.dumps(value))
        out[f.name.replace("_", "-")] = value
    return out


def _migrate_key(section: str, data: dict, old_key: str, new_key: str) -> None:
    if old_key not in data:
        return
    if new_key in data:
        logger.warning(f"Config [{section}] has both legacy '{old_key}' and '{new_key}'; keeping '{new_key}'.")
    else:
        logger.info(f"Migrating config key [{section}] '{old_key}' to '{new_key}'.")
        data[new_key] = data[old_key]
    del data[old_key]


def _coerce(value, hint, key: str):
    origin = t.get_origin(hint)
    args = t.get_args(hint)
    if value is None:
        _require(type(None) in args, key, "may not be null")
        return None
    if origin in (t.Union, types.UnionType):
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], key)
    if origin is tuple:
        _require(isinstance(value, (list, tuple)), key, "expected a list")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], key) for v in value)
        _require(len(value) == len(args), key, f"expected {len(args)} values, got {len(value)}")
        return tuple(_coerce(v, a, key) for v, a in zip(value, args))
    if hint is bool:
        _require(isinstance(value, bool), key, "expected true or false")
        return value
    if hint is int:
        _require(isinstance(value, int) and not isinstance(value, bool), key, "expected an integer")
        return value
    if hint is float:
        _require(isinstance(value, (int, float)) and not isinstance(value, bool), key, "expected a number")
        return float(value)
    if hint is str:
        _require(isinstance(value, str), key, "expected a string")
        return value
    return value


def parse_section(cls, section: str, raw: dict | None):
    """Builds one config dataclass from its kebab-case section."""
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(section, "section must be an object")
    data = dict(raw or {})
    for old_key, new_key in _LEGACY_KEYS.get(section, {}).items():
        _migrate_key(section, data, old_key, new_key)

    hints = t.get_type_hints(cls)
    fields = {f.name.replace("_", "-"): f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{section}.{unknown[0]}", f"unknown key (allowed: {', '.join(sorted(fields))})")
    kwargs = {fields[key]: _coerce(value, hints[fields[key]], f"{section}.{key}") for key, value in data.items()}
    return cls(**kwargs)


@dataclass(frozen=True)
class RunConfig:
    pipeline: PipelineConfig = dataclasses.field(default_factory=PipelineConfig)
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    simulation: SimulationConfig = dataclasses.field(default_factory=SimulationConfig)

    def to_dict(self) -> dict:
        return {"pipeline": self.pipeline.to_dict(), "train": self.train.to_dict(),
                "simulation": self.simulation.to_dict()}


def parse_config(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "configuration must be a JSON object")
    unknown = sorted(set(data) - set(SECTIONS))
    if unknown:
        raise ConfigError(unknown[0], f"unknown section (allowed: {', '.join(SECTIONS)})")
    return RunConfig(
        pipeline=parse_section(PipelineConfig, "pipeline", data.get("pipeline")),
        train=parse_section(TrainConfig, "train", data.get("train")),
        simulation=parse_section(SimulationConfig, "simulation", data.get("simulation")),
    )


def load_config(path) -> RunConfig:
    """
    Reads and validates a configuration file. A missing path gives the defaults.

    Raises:
        ConfigError: unreadable file, invalid JSON, unknown key or invalid value.
    """
    if path is None:
        return RunConfig()
    path_obj = pathlib.Path(path)
    try:
        with path_obj.open("r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(str(path_obj), "file not found") from e
    except json.JSONDecodeError as e:
        raise ConfigError(str(path_obj), f"invalid JSON: {e}") from e
    config = parse_config(data)
    logger.info(f"Loaded configuration from {path_obj} (pipeline hash {config.pipeline.config_hash()})")
    return config


def num_threads() -> int:
    """Worker count from POSEBEAM_NUM_THREADS, defaulting to the CPU count."""
    raw = os.environ.get(ENV_NUM_THREADS)
    if raw is None:
        return max(1, os.cpu_count() or 1)
    try:
        value = int(raw)
    except ValueError as e:
        raise ConfigError(ENV_NUM_THREADS, f"expected an integer, got {raw!r}") from e
    _require(value >= 1, ENV_NUM_THREADS, "must be >= 1")
    return value
