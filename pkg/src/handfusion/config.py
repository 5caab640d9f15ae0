"""Run configuration: nested dataclasses loaded from strict JSON.

Every key is explicit and unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ConfigError
from .fusion import MODES
from .losses import LossWeights


@dataclass
class FusionConfig:
    mode: str = "pdfnet"
    ftn: bool = True
    center_feature: bool = True
    fetch: str = "nearest"

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"fusion.mode must be one of {MODES}, got {self.mode!r}")
        if self.fetch not in ("nearest", "bilinear"):
            raise ConfigError(f"fusion.fetch must be 'nearest' or 'bilinear', got {self.fetch!r}")
        if self.mode == "rgb_only" and not self.center_feature:
            raise ConfigError("fusion.mode = rgb_only needs fusion.center_feature = true")


@dataclass
class PointConfig:
    n_points: int = 1024
    level_sizes: tuple[int, int] = (512, 128)
    radii: tuple[float, float] = (0.05, 0.12)
    neighbors: tuple[int, int] = (32, 64)
    outlier_band: float = 0.08
    outlier_unit: str = "m"

    @property
    def band_meters(self) -> float:
        return self.outlier_band * (1e-3 if self.outlier_unit == "mm" else 1.0)

    def validate(self) -> None:
        if self.outlier_unit not in ("m", "mm"):
            raise ConfigError(f"points.outlier_unit must be 'm' or 'mm', got {self.outlier_unit!r}")
        if not (self.n_points >= self.level_sizes[0] >= self.level_sizes[1] >= 1):
            raise ConfigError("points: need n_points >= level_sizes[0] >= level_sizes[1] >= 1")
        if min(self.radii) <= 0 or min(self.neighbors) < 1:
            raise ConfigError("points: radii must be > 0 and neighbors >= 1")


@dataclass
class ModelConfig:
    resolution: int = 192
    encoder_width: int = 16
    center_dim: int = 256
    cheb_k: int = 3
    default_depth: float = 0.55
    detect_threshold: float = 0.3
    mask_threshold: float = 0.5

    def validate(self) -> None:
        if self.resolution <= 0 or self.resolution % 4:
            raise ConfigError(f"model.resolution must be a positive multiple of 4, got {self.resolution}")
        if self.cheb_k < 1:
            raise ConfigError("model.cheb_k must be >= 1")
        if self.default_depth <= 0:
            raise ConfigError("model.default_depth must be > 0")


@dataclass
class TrainConfig:
    batch_size: int = 4
    lr: float = 1e-4
    lr_drop_epoch: int = 30
    lr_drop_factor: float = 0.1
    epochs: int = 80
    max_steps: int = 0  # 0 = no cap
    augment: bool = True
    checkpoint_every: int = 1
    eval_every: int = 1
    teacher_forcing: bool = True

    def validate(self) -> None:
        if self.batch_size < 1 or self.epochs < 1 or self.lr <= 0:
            raise ConfigError("train: batch_size, epochs and lr must be positive")
        if not 0 < self.lr_drop_factor <= 1:
            raise ConfigError("train.lr_drop_factor must be in (0, 1]")
        if self.max_steps < 0 or self.checkpoint_every < 1 or self.eval_every < 1:
            raise ConfigError("train: max_steps >= 0, checkpoint_every >= 1, eval_every >= 1")


@dataclass
class PathConfig:
    train_data: str = ""
    val_data: str = ""
    out_dir: str = "runs/default"
    topology: str = ""  # empty = the shipped asset


@dataclass
class RunConfig:
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    points: PointConfig = field(default_factory=PointConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    paths: PathConfig = field(default_factory=PathConfig)

    def validate(self, check_paths: bool = False) -> "RunConfig":
        for part in (self.model, self.fusion, self.points, self.train):
            part.validate()
        if check_paths:
            for key in ("train_data", "val_data", "topology"):
                value = getattr(self.paths, key)
                if value and not Path(value).exists():
                    raise ConfigError(f"paths.{key}: {value} does not exist")
            if not self.paths.train_data:
                raise ConfigError("paths.train_data is required")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _convert(tp, value, where: str):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        return from_dict(tp, value, where)
    if origin is tuple:
        args = typing.get_args(tp)
        if not isinstance(value, (list, tuple)) or len(value) != len(args):
            raise ConfigError(f"{where}: expected a list of {len(args)} values")
        return tuple(_convert(a, v, f"{where}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{where}: unsupported field type {tp}")


def from_dict(cls, data, where: str = "config"):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {k: _convert(hints[k], v, f"{where}.{k}") for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the JSON file, then ``overrides`` (a nested dict)."""
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file {path} not found") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    if overrides:
        data = _merge(data, overrides)
    return from_dict(RunConfig, data).validate()


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        out[k] = _merge(out.get(k, {}), v) if isinstance(v, dict) else v
    return out


def config_from_json(text: str) -> RunConfig:
    return from_dict(RunConfig, json.loads(text)).validate()
