from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


class PssConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    patch_size: int = Field(default=512, ge=8)
    n_full: int = Field(default=40, ge=0)
    n_half: int = Field(default=10, ge=0)
    include_whole: bool = True

    @model_validator(mode="after")
    def _has_source(self) -> PssConfig:
        if self.n_full == 0 and self.n_half == 0 and not self.include_whole:
            raise ValueError("A PSS needs at least one patch source")
        return self

    @property
    def patch_count(self) -> int:
        return self.n_full + self.n_half + (1 if self.include_whole else 0)

    @property
    def stacked_channels(self) -> int:
        return 3 * self.patch_count


class PyramidLevel(IntEnum):
    FULL = 0
    HALF = 1
    WHOLE = 2


@dataclass(frozen=True)
class PatchProvenance:
    """Top-left corner of a patch in its (white-padded) source level."""

    level: PyramidLevel
    x: int
    y: int


@dataclass(frozen=True)
class PyramidSamplingSet:
    """Patches in stacking order: full-res, then half-res, then the whole core.

    Patches are views into the pyramid levels they came from; do not write to them.
    """

    patches: tuple[np.ndarray, ...]
    provenance: tuple[PatchProvenance, ...]
    seed: int
    config: PssConfig

    @property
    def channels(self) -> int:
        return 3 * len(self.patches)

    def stacked(self) -> np.ndarray:
        """uint8 tensor (3 * patches, S, S), patch-major then RGB."""
        if not self.patches:
            size = self.config.patch_size
            return np.zeros((0, size, size), dtype=np.uint8)
        return np.concatenate([p.transpose(2, 0, 1) for p in self.patches], axis=0)


class PatchRecord(BaseModel):
    level: int
    x: int
    y: int


class PssManifest(BaseModel):
    """`pss.json` written next to exported patches."""

    seed: int
    config: PssConfig
    patches: list[PatchRecord] = Field(default_factory=list)
