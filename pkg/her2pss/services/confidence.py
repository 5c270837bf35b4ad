"""Confidence rules and Prediction construction from a softmax vector."""

from __future__ import annotations

import math
from collections.abc import Sequence

import numpy as np

from her2pss.core.errors import DomainError
from her2pss.models.classifier import ConfidenceRule, Prediction
from her2pss.models.scores import NUM_CLASSES, Her2Score

SIMPLEX_TOLERANCE = 1e-6
_LN_CLASSES = math.log(NUM_CLASSES)


def validate_simplex(probs: Sequence[float] | np.ndarray, tolerance: float = SIMPLEX_TOLERANCE) -> np.ndarray:
    arr = np.asarray(probs, dtype=np.float64)
    if arr.shape != (NUM_CLASSES,):
        raise DomainError(f"Expected {NUM_CLASSES} probabilities, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"Probabilities must be finite: {arr.tolist()}")
    if np.any(arr < 0):
        raise DomainError(f"Probabilities must be non-negative: {arr.tolist()}")
    if abs(float(arr.sum()) - 1.0) > tolerance:
        raise DomainError(f"Probabilities sum to {arr.sum():.9f}, not 1")
    return arr


def confidence(probs: Sequence[float] | np.ndarray, rule: ConfidenceRule = ConfidenceRule.TOP1) -> float:
    arr = validate_simplex(probs)
    match rule:
        case ConfidenceRule.TOP1:
            return float(arr.max())
        case ConfidenceRule.MARGIN:
            top2 = np.sort(arr)[-2:]
            return float(top2[1] - top2[0])
        case ConfidenceRule.ENTROPY:
            nz = arr[arr > 0]
            entropy = float(-(nz * np.log(nz)).sum())
            return min(1.0, max(0.0, 1.0 - entropy / _LN_CLASSES))
        case _:
            raise DomainError(f"Unknown confidence rule {rule!r}")


def argmax_score(probs: np.ndarray) -> Her2Score:
    # np.argmax returns the first maximum, so ties go to the lowest class.
    return Her2Score(int(np.argmax(probs)))


def make_prediction(
    probs: Sequence[float] | np.ndarray,
    *,
    pss_index: int,
    sample_id: str,
    rule: ConfidenceRule = ConfidenceRule.TOP1,
) -> Prediction:
    arr = validate_simplex(probs)
    return Prediction(
        probs=tuple(float(p) for p in arr),  # type: ignore[arg-type]
        argmax_score=argmax_score(arr),
        confidence=confidence(arr, rule),
        pss_index=pss_index,
        sample_id=sample_id,
    )
