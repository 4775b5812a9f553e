"""Run configuration: JSON on disk, nested dataclasses in memory.

Every constant the experiments depend on has a default here, so a resolved
config (written next to each run's outputs) fully describes the run.
Angles are given in degrees in the JSON file.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .denoiser import TrainConfig, UNetSpec
from .fusion import FusionParams
from .grid import GridSpec
from .planner import PlannerParams
from .sensor import LidarConfig
from .worlds import SCENARIOS

MODES = ("BL", "SS-RC-OSMM", "SS-RC-PMM", "SS-FC-OSMM", "SS-FC-PMM")


class ConfigError(ValueError):
    pass


def parse_mode(mode: str) -> tuple[bool, str, str]:
    """(predictive, window, merge) for a mode name."""
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; choose from {', '.join(MODES)}")
    if mode == "BL":
        return False, "", ""
    _, window, merge = mode.split("-")
    return True, window, merge


@dataclass(frozen=True)
class LidarSection:
    n_azimuth: int = 180
    n_rings: int = 48
    vfov_deg: tuple[float, float] = (-35.0, 25.0)
    max_range: float = 8.0
    blind_cone_half_angle_deg: float = 60.0
    mount_height: float = 0.6
    range_noise_std: float = 0.0

    def build(self) -> LidarConfig:
        return LidarConfig(
            n_azimuth=self.n_azimuth,
            n_rings=self.n_rings,
            vfov=(math.radians(self.vfov_deg[0]), math.radians(self.vfov_deg[1])),
            max_range=self.max_range,
            blind_cone_half_angle=math.radians(self.blind_cone_half_angle_deg),
            mount_height=self.mount_height,
            range_noise_std=self.range_noise_std,
        )


@dataclass(frozen=True)
class DiffusionSection:
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    inference_steps: int = 30


@dataclass(frozen=True)
class ModelSection:
    channels: tuple[int, ...] = (16, 32, 64)
    stem_stride: int = 2
    time_embed: int = 32
    groups: int = 4
    micro_batch: int = 4

    def spec(self) -> UNetSpec:
        return UNetSpec(tuple(self.channels), self.stem_stride, self.time_embed, self.groups)


@dataclass(frozen=True)
class TrainSection:
    batch_size: int = 16
    epochs: int = 48
    warmup_steps: int = 200
    lr_min: float = 1e-5
    lr_max: float = 2e-3
    seed: int = 0
    max_minutes: float = 28.0
    n_worlds: int = 24
    poses_per_world: int = 12
    augmentations: int = 10
    world_seed_offset: int = 1000

    def train_config(self, diffusion: DiffusionSection) -> TrainConfig:
        return TrainConfig(
            self.batch_size,
            self.epochs,
            self.warmup_steps,
            self.lr_min,
            self.lr_max,
            diffusion.T,
            diffusion.beta_start,
            diffusion.beta_end,
            self.seed,
            self.max_minutes,
        )


@dataclass(frozen=True)
class ExploreSection:
    k_predictions: int = 3
    tick_budget: int = 100
    step_length: float = 1.0
    coverage_target: float = 0.95
    gain_threshold: float = 1.0
    stuck_ticks: int = 4
    teleop_assist: bool = True
    teleop_distance: float = 1.2
    tick_seconds: float = 2.0


@dataclass(frozen=True)
class EvaluateSection:
    scenario: str = "square_loop"
    seeds: tuple[int, ...] = (0, 1, 2)
    embedder_seed: int = 0
    eval_every: int = 1
    warmup_ticks: int = 2
    step_length: float = 1.5
    modes: tuple[str, ...] = MODES


@dataclass(frozen=True)
class RunConfig:
    scenario: str = "corridor_corner"
    seed: int = 0
    seeds: tuple[int, ...] = ()
    mode: str = "SS-RC-PMM"
    output_dir: str = "runs/default"
    checkpoint: str = "runs/model.occm"
    grid: GridSpec = field(default_factory=GridSpec)
    lidar: LidarSection = field(default_factory=LidarSection)
    fusion: FusionParams = field(default_factory=FusionParams)
    planner: PlannerParams = field(default_factory=PlannerParams)
    diffusion: DiffusionSection = field(default_factory=DiffusionSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    explore: ExploreSection = field(default_factory=ExploreSection)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        parse_mode(self.mode)
        for m in self.evaluate.modes:
            parse_mode(m)
        if self.evaluate.scenario not in SCENARIOS:
            raise ConfigError(f"unknown evaluate.scenario {self.evaluate.scenario!r}")
        if not 3 <= self.explore.k_predictions <= 5:
            raise ConfigError("explore.k_predictions must lie in [3, 5]")
        if any(d % (self.model.stem_stride * 2 ** (len(self.model.channels) - 1)) for d in self.grid.dims):
            raise ConfigError("grid dims must be divisible by the model's total downsampling factor")

    @property
    def run_seeds(self) -> tuple[int, ...]:
        return tuple(self.seeds) if self.seeds else (self.seed,)

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return _to_jsonable(self)


def _to_jsonable(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [_to_jsonable(v) for v in obj]
    return obj


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"unknown key(s) in {path or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        current = getattr(defaults, name)
        where = f"{path}.{name}" if path else name
        if dataclasses.is_dataclass(current):
            kwargs[name] = _build(type(current), value, where)
        elif isinstance(current, tuple):
            if not isinstance(value, list):
                raise ConfigError(f"{where} must be a list")
            kwargs[name] = tuple(value)
        elif isinstance(current, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{where} must be a boolean")
            kwargs[name] = value
        elif isinstance(current, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{where} must be an integer")
            kwargs[name] = value
        elif isinstance(current, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{where} must be a number")
            kwargs[name] = float(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def config_from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "")


def _schema_for(value) -> dict:
    if dataclasses.is_dataclass(value):
        props = {f.name: _schema_for(getattr(value, f.name)) for f in dataclasses.fields(value)}
        return {"type": "object", "properties": props, "additionalProperties": False}
    if isinstance(value, bool):
        return {"type": "boolean", "default": value}
    if isinstance(value, int):
        return {"type": "integer", "default": value}
    if isinstance(value, float):
        return {"type": "number", "default": value}
    if isinstance(value, str):
        return {"type": "string", "default": value}
    if isinstance(value, tuple):
        items = {"type": "string"} if value and isinstance(value[0], str) else {"type": "number"}
        return {"type": "array", "items": items, "default": list(value)}
    raise TypeError(f"no schema for {type(value).__name__}")


def config_schema() -> dict:
    """JSON schema of the config file, with every default spelled out."""
    schema = _schema_for(RunConfig())
    schema["properties"]["mode"]["enum"] = list(MODES)
    schema["properties"]["scenario"]["enum"] = list(SCENARIOS)
    schema["properties"]["evaluate"]["properties"]["scenario"]["enum"] = list(SCENARIOS)
    schema["properties"]["seeds"]["items"] = {"type": "integer"}
    schema["properties"]["evaluate"]["properties"]["seeds"]["items"] = {"type": "integer"}
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "occugen run config (missing keys take the listed defaults; angles in degrees)",
        **schema,
    }


def load_config(path) -> RunConfig:
    """Read and validate a JSON config. Unreadable files raise OSError."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    return config_from_dict(data)
