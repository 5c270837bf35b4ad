"""Per-PSS prediction rows as JSON lines: {"sample_id","pss_index","probs":[4]}."""

from __future__ import annotations

import json
import logging
from collections.abc import Iterable
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ValidationError, field_validator

from her2pss.core.errors import DomainError, InputOutputError, ParseError
from her2pss.models.classifier import ConfidenceRule, Prediction
from her2pss.models.scores import NUM_CLASSES
from her2pss.services.confidence import SIMPLEX_TOLERANCE, make_prediction

logger = logging.getLogger(__name__)

RENORMALIZE_TOLERANCE = 1e-4


class PredictionRow(BaseModel):
    sample_id: str
    pss_index: int
    probs: list[float]

    @field_validator("pss_index")
    @classmethod
    def _non_negative(cls, value: int) -> int:
        if value < 0:
            raise ValueError("pss_index must be >= 0")
        return value

    @field_validator("probs")
    @classmethod
    def _four_classes(cls, value: list[float]) -> list[float]:
        if len(value) != NUM_CLASSES:
            raise ValueError(f"probs must have {NUM_CLASSES} entries, got {len(value)}")
        return value


def _normalize(probs: list[float]) -> np.ndarray:
    arr = np.asarray(probs, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise DomainError(f"probs must be finite and non-negative: {probs}")
    drift = abs(float(arr.sum()) - 1.0)
    if drift <= SIMPLEX_TOLERANCE:
        return arr
    if drift <= RENORMALIZE_TOLERANCE:
        return arr / arr.sum()
    raise DomainError(f"probs sum to {arr.sum():.6f}, more than {RENORMALIZE_TOLERANCE} off 1")


def parse_predictions(
    lines: Iterable[str],
    *,
    rule: ConfidenceRule = ConfidenceRule.TOP1,
    source: str | None = None,
) -> dict[str, list[Prediction]]:
    """Rows grouped by sample in first-appearance order, each list sorted by pss_index."""
    grouped: dict[str, dict[int, Prediction]] = {}
    renormalized = 0
    for line_no, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            row = PredictionRow.model_validate(json.loads(raw))
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid JSON: {e.msg}", path=source, line=line_no) from e
        except ValidationError as e:
            raise ParseError(f"malformed row: {e.errors()[0]['msg']}", path=source, line=line_no) from e

        try:
            probs = _normalize(row.probs)
        except DomainError as e:
            raise ParseError(str(e), path=source, line=line_no) from e
        if not np.array_equal(probs, np.asarray(row.probs, dtype=np.float64)):
            renormalized += 1

        per_sample = grouped.setdefault(row.sample_id, {})
        if row.pss_index in per_sample:
            raise ParseError(
                f"duplicate (sample_id={row.sample_id!r}, pss_index={row.pss_index})",
                path=source,
                line=line_no,
            )
        per_sample[row.pss_index] = make_prediction(
            probs, pss_index=row.pss_index, sample_id=row.sample_id, rule=rule
        )

    if renormalized:
        logger.warning(
            "Renormalized %d prediction rows within %.0e of the simplex",
            renormalized,
            RENORMALIZE_TOLERANCE,
        )
    return {sid: [preds[i] for i in sorted(preds)] for sid, preds in grouped.items()}


def load_external_predictions(
    path: str | Path, rule: ConfidenceRule = ConfidenceRule.TOP1
) -> dict[str, list[Prediction]]:
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as fh:
            result = parse_predictions(fh, rule=rule, source=str(path))
    except FileNotFoundError as e:
        raise InputOutputError(f"Predictions file not found: {path}") from e
    except OSError as e:
        raise InputOutputError(f"Cannot read {path}: {e}") from e
    logger.info(
        "Loaded %d predictions for %d samples from %s",
        sum(len(v) for v in result.values()),
        len(result),
        path,
    )
    return result


def format_prediction(pred: Prediction) -> str:
    row = {"sample_id": pred.sample_id, "pss_index": pred.pss_index, "probs": list(pred.probs)}
    return json.dumps(row, separators=(",", ":")) + "\n"


def write_predictions(path: str | Path, predictions: Iterable[Prediction]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            for pred in predictions:
                fh.write(format_prediction(pred))
    except OSError as e:
        raise InputOutputError(f"Cannot write {path}: {e}") from e
    return path
