"""Hierarchical run configuration: strict loading, resolution, hashing.

Every knob of the encoder, fusion, sampler, language-model and per-stage
training sections lives in one YAML file. Unknown keys are rejected so a
typo cannot silently fall back to a default. The config hash is stamped
into every checkpoint, manifest and report the run produces.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

from .encoders import EncoderConfig
from .errors import ConfigError
from .fusion import FusionConfig
from .lm import DecodeConfig, LMConfig
from .trainer import StageConfig


@dataclass
class DataConfig:
    train_manifest: Optional[str] = None
    dev_manifest: Optional[str] = None
    test_manifest: Optional[str] = None
    keypoint_root: Optional[str] = None
    media_root: Optional[str] = None
    frame_rate: float = 25.0
    # metric-side text tokenization: "char" (CJK-style) or "word"
    text_tokenization: str = "char"
    coord_scale: Optional[float] = None
    use_rgb: bool = False


@dataclass
class SamplerSection:
    p_samp: float = 0.10
    dedupe: bool = True


@dataclass
class StageOverrides:
    epochs: Optional[int] = None
    batch_size: Optional[int] = None
    grad_accum: Optional[int] = None
    lr: Optional[float] = None
    weight_decay: Optional[float] = None
    min_lr: Optional[float] = None


@dataclass
class LMSection(LMConfig):
    vocab_file: Optional[str] = None


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    data: DataConfig = field(default_factory=DataConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    lm: LMSection = field(default_factory=LMSection)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    stages: Dict[str, StageOverrides] = field(
        default_factory=lambda: {
            "stage1": StageOverrides(),
            "stage2": StageOverrides(),
            "stage3": StageOverrides(),
        }
    )

    def stage_config(self, stage: int, task: Optional[str] = None) -> StageConfig:
        """Table defaults merged with this run's explicit overrides."""
        overrides = self.stages.get(f"stage{stage}", StageOverrides())
        kwargs = {
            k: v
            for k, v in dataclasses.asdict(overrides).items()
            if v is not None
        }
        return StageConfig.for_stage(stage, task=task, **kwargs)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, default=str)
        return hashlib.sha256(canon.encode()).hexdigest()[:12]


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = known[name]
        nested = _nested_type(f)
        if nested is not None and isinstance(value, dict):
            kwargs[name] = _build(nested, value, f"{where}.{name}")
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _nested_type(f):
    # nested sections are recognized by their dataclass defaults
    if f.default_factory is not dataclasses.MISSING:  # type: ignore[misc]
        probe = f.default_factory()
        if dataclasses.is_dataclass(probe) and not isinstance(probe, type):
            return type(probe)
    if f.default is not dataclasses.MISSING and dataclasses.is_dataclass(f.default):
        return type(f.default)
    return None


def from_dict(data: dict) -> RunConfig:
    data = dict(data or {})
    stages_raw = data.pop("stages", None)
    cfg = _build(RunConfig, data, "config")
    if stages_raw is not None:
        if not isinstance(stages_raw, dict):
            raise ConfigError("config.stages: expected a mapping")
        unknown = set(stages_raw) - {"stage1", "stage2", "stage3"}
        if unknown:
            raise ConfigError(f"config.stages: unknown key(s) {sorted(unknown)}")
        stages = {
            "stage1": StageOverrides(),
            "stage2": StageOverrides(),
            "stage3": StageOverrides(),
        }
        for key, value in stages_raw.items():
            stages[key] = _build(StageOverrides, value, f"config.stages.{key}")
        cfg.stages = stages
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return from_dict(raw or {})


def save_config(cfg: RunConfig, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(
        yaml.safe_dump(cfg.to_dict(), sort_keys=False, allow_unicode=True),
        encoding="utf-8",
    )
