from __future__ import annotations

from dataclasses import dataclass

from pydantic import BaseModel, ConfigDict, Field, model_validator

from her2pss.models.classifier import ConfidenceRule, Prediction
from her2pss.models.pss import PatchProvenance
from her2pss.models.scores import Her2Score


class InferenceConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    n: int = Field(default=20, ge=1)
    k: int = Field(default=5, ge=1)
    confidence_rule: ConfidenceRule = ConfidenceRule.TOP1

    @model_validator(mode="after")
    def _k_within_n(self) -> InferenceConfig:
        if self.k > self.n:
            raise ValueError(f"k ({self.k}) must not exceed n ({self.n})")
        return self


@dataclass(frozen=True)
class KcsResult:
    sample_id: str
    n: int
    k: int
    confidence_rule: ConfidenceRule
    selected: tuple[Prediction, ...]
    final_score: Her2Score
    histogram: tuple[int, int, int, int]
    provenance: tuple[tuple[PatchProvenance, ...], ...] | None = None


class KcsEntry(BaseModel):
    pss_index: int
    probs: list[float]
    confidence: float
    argmax: str


class PatchOrigin(BaseModel):
    level: int
    x: int
    y: int


class PssOrigin(BaseModel):
    pss_index: int
    patches: list[PatchOrigin]


class CoreReport(BaseModel):
    """Per-core scoring report."""

    sample_id: str
    n: int
    k: int
    confidence_rule: ConfidenceRule
    final_score: str
    kcs: list[KcsEntry]
    histogram: list[int]
    provenance: list[PssOrigin] | None = None
