from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from her2pss.models.scores import NUM_CLASSES, Her2Score

REPORT_SCHEMA = "pss-report/1"
EVALUATION_SCHEMA = "pss-evaluation/1"
SWEEP_SCHEMA = "pss-sweep/1"


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are consensus labels, columns are predicted scores."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        if self.counts.shape != (NUM_CLASSES, NUM_CLASSES):
            raise ValueError(f"Confusion matrix must be {NUM_CLASSES}x{NUM_CLASSES}")
        if np.any(self.counts < 0):
            raise ValueError("Confusion counts must be non-negative")

    @classmethod
    def empty(cls) -> ConfusionMatrix:
        return cls(np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def correct(self) -> int:
        return int(np.trace(self.counts))

    def to_list(self) -> list[list[int]]:
        return [[int(v) for v in row] for row in self.counts]

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    def __hash__(self) -> int:
        return hash(self.counts.tobytes())


class OffPairPolicy(str, Enum):
    """How adjacent-pair accuracy treats predictions outside the pair."""

    ERROR = "error"
    EXCLUDE = "exclude"


@dataclass(frozen=True)
class PairwiseAccuracy:
    class_a: Her2Score
    class_b: Her2Score
    accuracy: float
    support: int
    policy: OffPairPolicy = OffPairPolicy.ERROR


class PairAccuracyRow(BaseModel):
    pair: str
    policy: OffPairPolicy
    accuracy: float | None
    accuracy_text: str | None
    support: int


class ClassRecallRow(BaseModel):
    label: str
    recall: float | None
    support: int


class EvaluationReport(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    schema_: str = Field(default=EVALUATION_SCHEMA, alias="schema")
    samples: int
    confidence_rule: str | None = None
    accuracy: float
    accuracy_text: str
    confusion: list[list[int]]
    per_class_recall: list[ClassRecallRow]
    adjacent_pairs: list[PairAccuracyRow]
