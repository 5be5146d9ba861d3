"""Run configuration. JSON in, validated models out; unknown keys are rejected."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True, frozen=False)


class ModelConfig(_Strict):
    num_queries: int = Field(40, ge=1)
    enc_layers: int = Field(2, ge=0)
    dec_layers: int = Field(4, ge=1)
    hidden_dim: int = Field(256, ge=2)
    ffn_dim: int = Field(1024, ge=1)
    points: int = Field(4, ge=1)
    heads: int = Field(8, ge=1)
    input_dim: int = Field(64, ge=1)
    num_classes: int = Field(4, ge=1)
    roi_bins: int = Field(8, ge=1)

    @model_validator(mode="after")
    def _heads_divide(self):
        if self.hidden_dim % self.heads:
            raise ValueError(f"hidden_dim {self.hidden_dim} not divisible by heads {self.heads}")
        return self


class RaidConfig(_Strict):
    gamma: float = Field(0.2, ge=-1.0, le=1.0)
    tau: float = Field(0.5, ge=0.0, le=1.0)
    set_mode: Literal["intersection", "verbatim"] = "intersection"


class LossConfig(_Strict):
    focal_alpha: float = Field(0.25, ge=0.0, le=1.0)
    focal_gamma: float = Field(2.0, ge=0.0)
    l1_weight: float = Field(5.0, ge=0.0)
    giou_weight: float = Field(2.0, ge=0.0)
    decay_weight: float = Field(0.1, ge=0.0)
    enc_weight: float = Field(1.0, ge=0.0)
    quality_weight: float = Field(1.0, ge=0.0)
    negatives: int = Field(8, ge=1)
    sub_iou_max: float = Field(0.3, gt=0.05, le=1.0)
    match_l1: float = Field(5.0, ge=0.0)
    match_iou: float = Field(2.0, ge=0.0)
    match_cls: float = Field(2.0, ge=0.0)
    contrastive_normalize: bool = False
    contrastive_temperature: float = Field(0.1, gt=0.0)
    exclude_self_pairs: bool = False


class InferConfig(_Strict):
    sigma: float = Field(0.5, gt=0.0)
    top_n: int = Field(100, ge=1)
    score_floor: float = Field(1e-4, ge=0.0, le=1.0)
    prune_threshold: float = Field(1e-3, ge=0.0, le=1.0)


class TrainConfig(_Strict):
    lr: float = Field(2e-4, gt=0.0)
    batch_size: int = Field(16, ge=1)
    epochs: int = Field(15, ge=0)
    max_steps: Optional[int] = Field(None, ge=0)
    seed: int = Field(0, ge=0)
    weight_decay: float = Field(1e-4, ge=0.0)
    max_grad_norm: float = Field(0.1, ge=0.0)
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = Field(1e-8, gt=0.0)

    @model_validator(mode="after")
    def _betas_in_range(self):
        if not all(0.0 <= b < 1.0 for b in self.betas):
            raise ValueError(f"betas must lie in [0, 1): {self.betas}")
        return self


class DataConfig(_Strict):
    num_videos: int = Field(16, ge=1)
    snippets_per_video: int = Field(256, ge=2)
    feature_dim: int = Field(64, ge=1)
    num_classes: int = Field(4, ge=1)
    min_actions: int = Field(1, ge=1)
    max_actions: int = Field(3, ge=1)
    min_duration: float = Field(0.05, gt=0.0, le=1.0)
    max_duration: float = Field(0.3, gt=0.0, le=1.0)
    noise_std: float = Field(0.5, ge=0.0)
    seed: int = Field(7, ge=0)
    val_fraction: float = Field(0.2, ge=0.0, lt=1.0)
    seconds_per_snippet: float = Field(0.2, gt=0.0)
    window: int = Field(256, ge=2)
    overlap: int = Field(192, ge=0)
    min_coverage: float = Field(0.75, gt=0.0, le=1.0)

    @model_validator(mode="after")
    def _ranges(self):
        if self.min_actions > self.max_actions:
            raise ValueError("min_actions exceeds max_actions")
        if self.min_duration > self.max_duration:
            raise ValueError("min_duration exceeds max_duration")
        if self.overlap >= self.window:
            raise ValueError("overlap must be smaller than window")
        return self


class AblationConfig(_Strict):
    raid: bool = True
    ace_enc: bool = True
    ace_dec_gt: bool = True
    quality: bool = True


class RunConfig(_Strict):
    model: ModelConfig = ModelConfig()
    raid: RaidConfig = RaidConfig()
    loss: LossConfig = LossConfig()
    infer: InferConfig = InferConfig()
    train: TrainConfig = TrainConfig()
    data: DataConfig = DataConfig()
    ablation: AblationConfig = AblationConfig()

    @model_validator(mode="after")
    def _consistent(self):
        if self.model.input_dim != self.data.feature_dim:
            raise ValueError(f"model.input_dim {self.model.input_dim} != data.feature_dim {self.data.feature_dim}")
        if self.model.num_classes != self.data.num_classes:
            raise ValueError(f"model.num_classes {self.model.num_classes} != data.num_classes {self.data.num_classes}")
        if self.model.num_queries < self.data.max_actions:
            raise ValueError("num_queries must cover max_actions per window")
        return self

    def to_dict(self) -> dict:
        return self.model_dump(mode="json")

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def base_configuration(config: RunConfig) -> RunConfig:
    """The same run with relational attention, ACE losses and quality all switched off."""
    data = config.to_dict()
    data["ablation"] = {"raid": False, "ace_enc": False, "ace_dec_gt": False, "quality": False}
    return RunConfig.model_validate(data)


def config_from_dict(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data)


def tiny_config(**overrides) -> RunConfig:
    """The small model used for finite-difference checks."""
    data = {
        "model": {"num_queries": 5, "enc_layers": 1, "dec_layers": 2, "hidden_dim": 32, "ffn_dim": 32,
                  "points": 2, "heads": 2, "input_dim": 16, "num_classes": 3},
        "data": {"feature_dim": 16, "num_classes": 3, "snippets_per_video": 32, "window": 32,
                 "overlap": 24, "max_actions": 3},
        "loss": {"negatives": 4},
    }
    for key, value in overrides.items():
        data.setdefault(key, {}).update(value)
    return config_from_dict(data)
