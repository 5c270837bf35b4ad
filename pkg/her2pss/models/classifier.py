from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator

from her2pss.models.scores import NUM_CLASSES, Her2Score


class ConfidenceRule(str, Enum):
    TOP1 = "top1"
    MARGIN = "margin"
    ENTROPY = "entropy"


@dataclass(frozen=True)
class Prediction:
    probs: tuple[float, float, float, float]
    argmax_score: Her2Score
    confidence: float
    pss_index: int
    sample_id: str


@dataclass(frozen=True)
class ClassWeights:
    w: tuple[float, float, float, float]

    def __post_init__(self) -> None:
        if len(self.w) != NUM_CLASSES:
            raise ValueError(f"Expected {NUM_CLASSES} class weights, got {len(self.w)}")
        if not all(math.isfinite(v) and v > 0 for v in self.w):
            raise ValueError(f"Class weights must be finite and positive, got {self.w}")

    @classmethod
    def uniform(cls) -> ClassWeights:
        return cls(w=(1.0,) * NUM_CLASSES)


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    initial_lr: float = Field(default=1e-5, gt=0)
    batch_size: int = Field(default=12, ge=1)
    weight_decay: float = Field(default=1e-4, ge=0)
    plateau_patience: int = Field(default=5, ge=1)
    lr_factor: float = Field(default=0.5, gt=0, lt=1)
    lr_floor: float = Field(default=1e-7, ge=0)
    max_epochs: int = Field(default=30, ge=0)
    seed: int = Field(default=0, ge=0, lt=1 << 64)
    precision: Literal["float32", "float64"] = "float32"


class ManifestEntry(BaseModel):
    sample_id: str
    path: Path
    score: Her2Score
    split: Literal["train", "val", "test"]

    @field_validator("score", mode="before")
    @classmethod
    def _parse_score(cls, value: object) -> Her2Score:
        if isinstance(value, Her2Score):
            return value
        return Her2Score.parse(value)  # type: ignore[arg-type]


class DatasetManifest(BaseModel):
    """`manifest.json`: core paths are relative to the manifest's directory."""

    cores: list[ManifestEntry] = Field(default_factory=list)

    def split(self, name: str) -> list[ManifestEntry]:
        return [entry for entry in self.cores if entry.split == name]


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    val_accuracy: float
