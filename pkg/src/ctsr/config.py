"""Experiment configuration: one YAML document drives the whole pipeline.

Every section is schema-validated against its dataclass (unknown keys are
rejected with the offending path) and a single master seed deterministically
derives the per-stage seeds, so runs that differ only in the network section
are directly comparable.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .inference import TileSpec
from .models import NetworkSpec
from .phantom import DegradationSpec
from .training import TrainConfig


class ConfigError(ValueError):
    """Malformed experiment config; message names the offending field."""


@dataclass
class PhantomTemplate:
    dims: tuple[int, int, int] = (64, 256, 256)
    n_defects: int = 24
    voxel_size_um: float = 17.28
    part_shape: str = "block"
    material_intensity: float = 0.8
    background_intensity: float = 0.2
    diameter_range_vox: tuple[float, float] = (2.0, 14.0)

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.diameter_range_vox = tuple(float(v) for v in self.diameter_range_vox)


@dataclass
class DatasetSection:
    n_train_parts: int = 2
    n_test_parts: int = 1
    hr_patch: int = 128
    stride: int = 64


@dataclass
class EvalSection:
    axes: tuple[str, ...] = ("xy", "xz")
    threshold: str | float = "midpoint"
    bin_edges_um: tuple[float, ...] | None = None

    def __post_init__(self):
        self.axes = tuple(self.axes)


@dataclass
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "runs/experiment"
    phantom: PhantomTemplate = field(default_factory=PhantomTemplate)
    degradation: DegradationSpec = field(default_factory=DegradationSpec)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    network: NetworkSpec = field(default_factory=lambda: NetworkSpec("srcnn", "2.5d"))
    training: TrainConfig = field(default_factory=TrainConfig)
    tiles: TileSpec = field(default_factory=TileSpec)
    evaluation: EvalSection = field(default_factory=EvalSection)

    def sub_seed(self, stage: str) -> int:
        """Deterministic per-stage seed derived from the master seed."""
        digest = hashlib.sha256(f"{self.seed}:{stage}".encode()).digest()
        return int(np.frombuffer(digest[:4], dtype=np.uint32)[0])


_SECTION_TYPES = {
    "phantom": PhantomTemplate,
    "degradation": DegradationSpec,
    "dataset": DatasetSection,
    "network": NetworkSpec,
    "training": TrainConfig,
    "tiles": TileSpec,
    "evaluation": EvalSection,
}

# seeds in these sections default to values derived from the master seed
_DERIVED_SEEDS = {"degradation": "degradation", "training": "training"}


def _build_section(cls, doc: dict, path: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(doc).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    for key in doc:
        if key not in names:
            raise ConfigError(f"{path}.{key}: unknown key")
    coerced = {k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()}
    try:
        return cls(**coerced)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def parse_config(doc: dict, seed_override: int | None = None) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError(f"config root: expected a mapping, got {type(doc).__name__}")
    known = {"seed", "output_dir"} | set(_SECTION_TYPES)
    for key in doc:
        if key not in known:
            raise ConfigError(f"{key}: unknown key")
    seed = seed_override if seed_override is not None else doc.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError(f"seed: expected an integer, got {seed!r}")

    cfg = ExperimentConfig(seed=seed, output_dir=str(doc.get("output_dir", "runs/experiment")))
    for name, cls in _SECTION_TYPES.items():
        section = dict(doc.get(name, {}) or {})
        if not section and name == "network":
            continue  # keep the default network; the type has no zero-arg form
        if name in _DERIVED_SEEDS and "seed" not in section:
            section["seed"] = cfg.sub_seed(_DERIVED_SEEDS[name])
        setattr(cfg, name, _build_section(cls, section, name))
    return cfg


def load_config(path: str | Path, seed_override: int | None = None) -> ExperimentConfig:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    return parse_config(doc or {}, seed_override=seed_override)


def config_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
