"""One JSON document configures the whole pipeline; missing keys take defaults."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .dataset import DatasetConfig
from .geometry.mesh import PRIMITIVE_KINDS


@dataclass(frozen=True)
class ObjectsConfig:
    count: int = 20
    families: tuple = PRIMITIVE_KINDS


@dataclass(frozen=True)
class NetworkSection:
    conv_layers: tuple = ((8, 3, True), (16, 3, True), (32, 2, False))
    hidden: tuple = (128, 64)


@dataclass(frozen=True)
class TrainSection:
    loss: str = "combined"
    beta: float = 0.75
    epochs: int = 200
    batch_size: int = 16
    learning_rate: float = 1e-3


@dataclass(frozen=True)
class EvalSection:
    beta: float = 0.75
    friction_mu: float = 0.5
    directions: tuple = (64, 256, 1024)
    refine_step: float = 0.1
    refine_max_iters: int = 500
    refine_joints_only: bool = False
    compare_gripper: str = "simple9"


@dataclass(frozen=True)
class PathsSection:
    objects: str = "work/objects"
    dataset: str = "work/dataset"
    models: str = "work/models"
    reports: str = "work/reports"


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    objects: ObjectsConfig = field(default_factory=ObjectsConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    network: NetworkSection = field(default_factory=NetworkSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    paths: PathsSection = field(default_factory=PathsSection)

    def to_dict(self):
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        kw = {}
        if "seed" in d:
            kw["seed"] = int(d["seed"])
        sections = {
            "objects": ObjectsConfig,
            "network": NetworkSection,
            "train": TrainSection,
            "eval": EvalSection,
            "paths": PathsSection,
        }
        for name, typ in sections.items():
            if name in d:
                kw[name] = _section(typ, d[name], name)
        if "dataset" in d:
            kw["dataset"] = DatasetConfig.from_dict(d["dataset"])
        return cls(**kw)


def _section(typ, values, name):
    allowed = {f.name for f in fields(typ)}
    unknown = set(values) - allowed
    if unknown:
        raise ValueError(f"unknown keys in config section {name!r}: {sorted(unknown)}")
    conv = {k: tuple(tuple(x) if isinstance(x, list) else x for x in v) if isinstance(v, list) else v for k, v in values.items()}
    return typ(**conv)


def load_config(path=None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file {p} not found")
    return PipelineConfig.from_dict(json.loads(p.read_text()))
