from __future__ import annotations

import math
from dataclasses import dataclass

from pydantic import BaseModel, Field, field_validator, model_validator


class HoughParams(BaseModel):
    r_min: int = Field(default=350, gt=0, description="Smallest core radius, full-resolution pixels")
    r_max: int = Field(default=550, gt=0, description="Largest core radius, full-resolution pixels")
    edge_threshold: float = Field(
        default=20.0,
        ge=0.0,
        description="Sobel magnitude threshold, in gray levels of step height",
    )
    accumulator_threshold: float | None = Field(
        default=None,
        ge=0.0,
        description="Minimum center votes in a 3x3 window; None derives it from r_min",
    )
    nms_min_center_distance: int | None = Field(
        default=None,
        gt=0,
        description="Minimum distance between returned centers; None uses r_min",
    )
    working_downsample: int = Field(default=8, ge=1)

    @field_validator("working_downsample")
    @classmethod
    def _power_of_two(cls, value: int) -> int:
        if value & (value - 1):
            raise ValueError(f"working_downsample must be a power of two, got {value}")
        return value

    @model_validator(mode="after")
    def _radius_order(self) -> HoughParams:
        if self.r_min >= self.r_max:
            raise ValueError(f"r_min ({self.r_min}) must be smaller than r_max ({self.r_max})")
        return self

    @property
    def min_center_distance(self) -> int:
        return self.nms_min_center_distance or self.r_min

    def votes_threshold(self) -> float:
        if self.accumulator_threshold is not None:
            return self.accumulator_threshold
        # Most of the smallest circumference at working scale.
        return 0.6 * 2.0 * math.pi * (self.r_min / self.working_downsample)


@dataclass(frozen=True)
class CircleDetection:
    cx: float
    cy: float
    radius: float
    accumulator_score: float

    def to_json_dict(self) -> dict[str, int | float]:
        return {
            "cx": int(round(self.cx)),
            "cy": int(round(self.cy)),
            "r": int(round(self.radius)),
            "score": round(float(self.accumulator_score), 3),
        }
