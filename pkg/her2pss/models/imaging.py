from __future__ import annotations

from enum import Enum

from pydantic import BaseModel, ConfigDict, Field

from her2pss.models.scores import Her2Score

# Per-class (stain intensity, membrane coverage) used by the synthetic generator.
DEFAULT_STAIN_SCHEDULE: dict[Her2Score, tuple[float, float]] = {
    Her2Score.ZERO: (0.05, 0.03),
    Her2Score.ONE_PLUS: (0.35, 0.20),
    Her2Score.TWO_PLUS: (0.60, 0.45),
    Her2Score.THREE_PLUS: (0.90, 0.75),
}


class DihedralTransform(str, Enum):
    """The 8 symmetries of the square."""

    IDENTITY = "identity"
    ROT90 = "rot90"
    ROT180 = "rot180"
    ROT270 = "rot270"
    HFLIP = "hflip"
    VFLIP = "vflip"
    TRANSPOSE = "transpose"
    ANTITRANSPOSE = "antitranspose"

    @property
    def inverse(self) -> DihedralTransform:
        if self is DihedralTransform.ROT90:
            return DihedralTransform.ROT270
        if self is DihedralTransform.ROT270:
            return DihedralTransform.ROT90
        return self


# Fixed order used when drawing an element uniformly from a random stream.
DIHEDRAL_ELEMENTS: tuple[DihedralTransform, ...] = tuple(DihedralTransform)


class SyntheticCoreSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    class_label: Her2Score
    diameter: int = Field(default=512, ge=64)
    stain_intensity_mean: float = Field(ge=0.0, le=1.0)
    stain_coverage_fraction: float = Field(ge=0.0, le=1.0)
    texture_seed: int = Field(default=0, ge=0, lt=1 << 64)

    @classmethod
    def for_class(
        cls, class_label: Her2Score, *, diameter: int = 512, texture_seed: int = 0
    ) -> SyntheticCoreSpec:
        intensity, coverage = DEFAULT_STAIN_SCHEDULE[class_label]
        return cls(
            class_label=class_label,
            diameter=diameter,
            stain_intensity_mean=intensity,
            stain_coverage_fraction=coverage,
            texture_seed=texture_seed,
        )


class CircleTruth(BaseModel):
    """Ground-truth disk written next to a synthetic slide."""

    cx: int
    cy: int
    r: int
