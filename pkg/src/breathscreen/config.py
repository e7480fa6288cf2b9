"""Toolkit configuration: a JSON document with five blocks.

Every key has a default; unknown keys are rejected.  ``breathscreen config
--dump`` prints the defaults.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .dsp import DspConfig
from .errors import InvalidConfig, InvalidSpec
from .models import TrainConfig
from .pipeline import PipelineSpec
from .select import SelectionConfig
from .stats import resolve_mask


@dataclass(frozen=True)
class FeaturesConfig:
    mask: str | tuple[str, ...] = "paper57"


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "dnn"
    hidden: tuple[int, ...] = (64, 32, 16)
    dropout: float = 0.25
    threshold: float = 0.5
    learning_rate: float = 0.01
    momentum: float = 0.9
    epochs: int = 300
    batch_size: int = 16
    seed: int = 0

    @property
    def train(self) -> TrainConfig:
        return TrainConfig(self.learning_rate, self.momentum, self.epochs, self.batch_size, self.seed)


@dataclass(frozen=True)
class CvConfig:
    k: int = 3
    seed: int = 0
    grid_seeds: tuple[int, ...] = (0,)


@dataclass(frozen=True)
class ToolkitConfig:
    dsp: DspConfig = field(default_factory=DspConfig)
    features: FeaturesConfig = field(default_factory=FeaturesConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    cv: CvConfig = field(default_factory=CvConfig)

    def pipeline(self) -> PipelineSpec:
        return PipelineSpec(
            model=self.model.kind,
            selection=self.selection,
            train=self.model.train,
            hidden=tuple(self.model.hidden),
            dropout=self.model.dropout,
            threshold=self.model.threshold,
        )

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


_BLOCKS = {
    "dsp": DspConfig,
    "features": FeaturesConfig,
    "selection": SelectionConfig,
    "model": ModelConfig,
    "cv": CvConfig,
}


def _block(cls, values: dict, where: str):
    if not isinstance(values, dict):
        raise InvalidConfig(f"{where}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise InvalidConfig(f"{where}: unknown keys {unknown}")
    # JSON has no tuples; frozen dataclasses want hashable values
    conv = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    return replace(cls(), **conv)


def config_from_dict(d: dict) -> ToolkitConfig:
    if not isinstance(d, dict):
        raise InvalidConfig("config must be a JSON object")
    unknown = sorted(set(d) - set(_BLOCKS))
    if unknown:
        raise InvalidConfig(f"unknown config blocks {unknown}")
    cfg = ToolkitConfig(**{k: _block(_BLOCKS[k], d[k], k) for k in d})
    validate(cfg)
    return cfg


def validate(cfg: ToolkitConfig) -> None:
    resolve_mask(cfg.features.mask)
    if cfg.model.kind not in ("dnn", "cnn"):
        raise InvalidConfig(f"model.kind must be dnn or cnn, got {cfg.model.kind!r}")
    if cfg.selection.method not in ("none", "rf", "pca", "corr"):
        raise InvalidConfig(f"selection.method must be none/rf/pca/corr, got {cfg.selection.method!r}")
    if cfg.selection.pca_mode not in ("project", "pick"):
        raise InvalidConfig("selection.pca_mode must be project or pick")
    if cfg.cv.k < 2:
        raise InvalidConfig("cv.k must be >= 2")
    if cfg.dsp.window not in ("hamming", "rectangular"):
        raise InvalidConfig("dsp.window must be hamming or rectangular")
    try:
        cfg.model.train.validate()
    except InvalidSpec as exc:
        raise InvalidConfig(f"model: {exc}") from exc


def load_config(path=None) -> ToolkitConfig:
    if path is None:
        return ToolkitConfig()
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"{path}: {exc}") from exc
    return config_from_dict(d)
