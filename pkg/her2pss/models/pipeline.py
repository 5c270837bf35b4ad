from __future__ import annotations

from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from her2pss.core.errors import ConfigError, InputOutputError
from her2pss.models.classifier import TrainConfig
from her2pss.models.hough import HoughParams
from her2pss.models.inference import InferenceConfig
from her2pss.models.pss import PssConfig


class PipelineConfig(BaseModel):
    """Every pipeline hyperparameter plus the master seed.

    Loaded from JSON; CLI flags override individual fields.
    """

    model_config = ConfigDict(extra="forbid")

    pss: PssConfig = Field(default_factory=PssConfig)
    inference: InferenceConfig = Field(default_factory=InferenceConfig)
    training: TrainConfig = Field(default_factory=TrainConfig)
    hough: HoughParams = Field(default_factory=HoughParams)
    seed: int = Field(default=0, ge=0, lt=1 << 64)

    @classmethod
    def from_file(cls, path: str | Path) -> PipelineConfig:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except FileNotFoundError as e:
            raise InputOutputError(f"Config file not found: {path}") from e
        except OSError as e:
            raise InputOutputError(f"Cannot read config {path}: {e}") from e
        try:
            return cls.model_validate_json(text)
        except ValidationError as e:
            raise ConfigError(f"{path}: invalid pipeline config: {e}") from e

    def override(self, section: str, **values: Any) -> PipelineConfig:
        """Copy with `values` (None entries ignored) applied to one section, revalidated."""
        updates = {k: v for k, v in values.items() if v is not None}
        if not updates:
            return self
        current = getattr(self, section)
        try:
            replaced = type(current).model_validate({**current.model_dump(), **updates})
        except ValidationError as e:
            raise ConfigError(f"Invalid {section} settings: {e}") from e
        return self.model_copy(update={section: replaced})

    def with_seed(self, seed: int | None) -> PipelineConfig:
        if seed is None:
            return self
        if not 0 <= seed < 1 << 64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {seed}")
        return self.model_copy(update={"seed": seed})
