"""Run configuration: one document covering data, models, training and sensing.

Documents are YAML or JSON. Unknown keys are rejected so that typos fail
loudly instead of silently falling back to defaults.
"""

from __future__ import annotations

import json
from dataclasses import MISSING, asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import yaml

from .pipeline.models import DenoiserConfig, PipelineConfig
from .sensing import SensorConfig
from .synthetic import GenConfig
from .vqvae import PriorConfig, VqvaeConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    n_sequences: int = 100
    arena_half: float = 4.0
    object_width_range: list = field(default_factory=lambda: [0.4, 1.2])
    object_depth_range: list = field(default_factory=lambda: [0.4, 2.0])
    seat_height_range: list = field(default_factory=lambda: [0.4, 0.5])
    curvature_range: list = field(default_factory=lambda: [0.0, 0.5])
    gait_period: int = 30
    blend_frames: int = 61
    walk_speed: float = 1.0
    lie_fraction: float = 0.3


@dataclass
class ModelSection:
    T: int = 100
    beta_start: float = 1e-3
    beta_end: float = 0.2
    n_max: int = 12
    dim: int = 128
    heads: int = 4
    blocks: int = 4
    ff_mult: int = 2
    K: int = 64
    d: int = 32
    hidden: int = 128
    beta: float = 0.25
    prior_dim: int = 64
    prior_heads: int = 4
    prior_blocks: int = 2
    temperature: float = 1.0
    goal_noise: float = 0.05


@dataclass
class TrainingSection:
    # the faithful batch size is 256; 32 keeps CPU runs short
    lr: float = 1e-4
    batch_size: int = 32
    steps: int = 2000


@dataclass
class SensorSection:
    cyl_radius: float = 1.0
    cyl_height: float = 2.0
    n_spheres: int = 128
    sphere_radius: float = 0.1
    rings: int = 2
    levels: int = 8
    spokes: int = 8


@dataclass
class GenerateSection:
    samples: int = 8
    action: str = "sit"


@dataclass
class PathsSection:
    data: str = "data"
    models: str = "models"
    generated: str = "generated"
    report: str = "report"


@dataclass
class RunConfig:
    seed: int = 0
    paths: PathsSection = field(default_factory=PathsSection)
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    sensor: SensorSection = field(default_factory=SensorSection)
    generate: GenerateSection = field(default_factory=GenerateSection)

    @classmethod
    def from_dict(cls, doc: dict | None) -> RunConfig:
        return _build(cls, doc or {}, "")

    @classmethod
    def load(cls, path) -> RunConfig:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {path} does not exist")
        text = p.read_text()
        try:
            doc = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
        except (json.JSONDecodeError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if doc is not None and not isinstance(doc, dict):
            raise ConfigError("config document must be a mapping")
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return asdict(self)

    def gen_config(self) -> GenConfig:
        d = self.data
        try:
            return GenConfig(seed=self.seed, n_sequences=d.n_sequences, arena_half=d.arena_half,
                             object_width_range=tuple(d.object_width_range),
                             object_depth_range=tuple(d.object_depth_range),
                             seat_height_range=tuple(d.seat_height_range),
                             curvature_range=tuple(d.curvature_range), gait_period=d.gait_period,
                             blend_frames=d.blend_frames, walk_speed=d.walk_speed, lie_fraction=d.lie_fraction)
        except ValueError as exc:
            raise ConfigError(str(exc).replace("generator config", "data config")) from exc

    def sensor_config(self) -> SensorConfig:
        try:
            return SensorConfig(**asdict(self.sensor))
        except ValueError as exc:
            raise ConfigError(f"sensor: {exc}") from exc

    def pipeline_config(self) -> PipelineConfig:
        m, t = self.model, self.training
        bad = [k for k, ok in (("training.lr", t.lr > 0), ("training.batch_size", t.batch_size > 0),
                               ("training.steps", t.steps >= 0), ("model.T", m.T >= 1),
                               ("model.n_max", m.n_max >= 1), ("model.dim", m.dim % m.heads == 0),
                               ("model.K", m.K >= 1)) if not ok]
        if bad:
            raise ConfigError(f"invalid values for: {', '.join(bad)}")
        return PipelineConfig(
            T=m.T, beta_start=m.beta_start, beta_end=m.beta_end, n_max=m.n_max,
            denoiser=DenoiserConfig(m.dim, m.heads, m.blocks, m.ff_mult),
            vqvae=VqvaeConfig(K=m.K, d=m.d, hidden=m.hidden, beta=m.beta),
            prior=PriorConfig(dim=m.prior_dim, heads=m.prior_heads, blocks=m.prior_blocks),
            steps=t.steps, batch_size=t.batch_size, lr=t.lr, temperature=m.temperature,
            goal_noise=m.goal_noise, sensor=self.sensor_config(),
        )


def _build(cls, doc: dict, prefix: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{prefix or 'config'} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(doc) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(prefix + k for k in unknown)}")
    kwargs = {}
    for name, value in doc.items():
        f = known[name]
        default = f.default_factory() if f.default_factory is not MISSING else f.default
        if is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{prefix}{name}.")
        else:
            kwargs[name] = _coerce(value, default, prefix + name)
    return cls(**kwargs)


def _coerce(value, default, key: str):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number")
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, (list, tuple)) or len(value) != len(default):
            raise ConfigError(f"{key} must be a list of {len(default)} numbers")
        return [float(v) for v in value]
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string")
        return value
    return value
