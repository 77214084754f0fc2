"""Pipeline configuration file (TOML) with per-stage sections.

Example::

    seed = 1

    [synth]
    videos = 50
    frames = 200
    coherence = 0.9

    [pca]
    dim = 14

    [train]
    steps = 500
    batch_n = 128
    weights = true

    [train.augment]
    rotation = 1.5707963
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .pretrain.train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class SynthSection:
    videos: int = 50
    frames: int = 200
    coherence: float = 0.9
    size: int = 64
    stroke: float = 1.5
    noise: float = 0.0


@dataclass
class IngestSection:
    balance: bool = True
    strict: bool = False
    min_score: float | None = None


@dataclass
class PcaSection:
    dim: int = 14
    center: bool = True
    subsample: int | None = None


@dataclass
class MineSection:
    topk: int = 1
    profile_ranks: list[int] = field(default_factory=lambda: [1, 2, 5, 10, 50])


@dataclass
class EvalSection:
    root_relative: bool = False


@dataclass
class PipelineConfig:
    seed: int = 0
    synth: SynthSection = field(default_factory=SynthSection)
    ingest: IngestSection = field(default_factory=IngestSection)
    pca: PcaSection = field(default_factory=PcaSection)
    mine: MineSection = field(default_factory=MineSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSection = field(default_factory=EvalSection)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"] = self.train.to_dict()
        return d


_SECTIONS = {
    "synth": SynthSection,
    "ingest": IngestSection,
    "pca": PcaSection,
    "mine": MineSection,
    "eval": EvalSection,
}


def _build(cls, name: str, obj):
    if not isinstance(obj, dict):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(obj) - known)
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {unknown}")
    try:
        return cls(**obj)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"[{name}]: {err}") from None


def parse_config(obj: dict) -> PipelineConfig:
    allowed = {"seed", "train", *_SECTIONS}
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ConfigError(f"unknown top-level keys: {unknown}")
    kwargs = {}
    if "seed" in obj:
        kwargs["seed"] = int(obj["seed"])
    for name, cls in _SECTIONS.items():
        if name in obj:
            kwargs[name] = _build(cls, name, obj[name])
    if "train" in obj:
        train = obj["train"]
        if not isinstance(train, dict):
            raise ConfigError("[train] must be a table")
        try:
            kwargs["train"] = TrainConfig.from_dict(train)
        except (TypeError, ValueError) as err:
            raise ConfigError(f"[train]: {err}") from None
    return PipelineConfig(**kwargs)


def load_config(path) -> PipelineConfig:
    with open(path, "rb") as fh:
        try:
            obj = tomllib.load(fh)
        except tomllib.TOMLDecodeError as err:
            raise ConfigError(f"{path}: {err}") from None
    return parse_config(obj)
