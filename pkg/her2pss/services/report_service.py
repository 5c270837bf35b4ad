"""Accuracy, confusion matrices, adjacent-pair accuracies and KCS histogram reports."""

from __future__ import annotations

import csv
import io
import json
import logging
from collections.abc import Mapping, Sequence
from pathlib import Path

import numpy as np

from her2pss.core.errors import ArityError, DegenerateInputError, DomainError, InputOutputError, ParseError
from her2pss.core.settings import Settings, get_settings
from her2pss.models.classifier import Prediction
from her2pss.models.inference import CoreReport, KcsResult
from her2pss.models.report import (
    REPORT_SCHEMA,
    ClassRecallRow,
    ConfusionMatrix,
    EvaluationReport,
    OffPairPolicy,
    PairAccuracyRow,
    PairwiseAccuracy,
)
from her2pss.models.scores import NUM_CLASSES, Her2Score, require_score

logger = logging.getLogger(__name__)

ADJACENT_PAIRS: tuple[tuple[Her2Score, Her2Score], ...] = (
    (Her2Score.ZERO, Her2Score.ONE_PLUS),
    (Her2Score.ONE_PLUS, Her2Score.TWO_PLUS),
    (Her2Score.TWO_PLUS, Her2Score.THREE_PLUS),
)
UNLABELED = "unlabeled"


def format_percent(value: float) -> str:
    """Four significant digits: 0.847 -> '84.70%'."""
    return f"{100.0 * value:#.4g}%"


def _as_indices(values: Sequence[object]) -> np.ndarray:
    return np.asarray([int(require_score(v)) for v in values], dtype=np.intp)


def confusion(labels: Sequence[object], predictions: Sequence[object]) -> ConfusionMatrix:
    if len(labels) != len(predictions):
        raise ArityError(f"{len(labels)} labels but {len(predictions)} predictions")
    if not labels:
        return ConfusionMatrix.empty()
    flat = np.bincount(
        _as_indices(labels) * NUM_CLASSES + _as_indices(predictions),
        minlength=NUM_CLASSES * NUM_CLASSES,
    )
    return ConfusionMatrix(flat.reshape(NUM_CLASSES, NUM_CLASSES).astype(np.int64))


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise DegenerateInputError("Accuracy of an empty confusion matrix")
    return cm.correct / cm.total


def per_class_recall(cm: ConfusionMatrix) -> list[tuple[Her2Score, float | None, int]]:
    rows = []
    for score in Her2Score:
        support = int(cm.counts[score].sum())
        recall = cm.counts[score, score] / support if support else None
        rows.append((score, recall, support))
    return rows


def adjacent_pair_accuracy(
    labels: Sequence[object],
    predictions: Sequence[object],
    a: Her2Score,
    b: Her2Score,
    policy: OffPairPolicy = OffPairPolicy.ERROR,
) -> PairwiseAccuracy:
    """Accuracy over samples labeled a or b; off-pair predictions are errors or dropped."""
    if len(labels) != len(predictions):
        raise ArityError(f"{len(labels)} labels but {len(predictions)} predictions")
    a, b = sorted((Her2Score(a), Her2Score(b)))
    if b - a != 1:
        raise DomainError(f"{a.label} and {b.label} are not adjacent scores")

    y, p = _as_indices(labels), _as_indices(predictions)
    mask = (y == a) | (y == b)
    if policy is OffPairPolicy.EXCLUDE:
        mask &= (p == a) | (p == b)
    support = int(mask.sum())
    if support == 0:
        raise DegenerateInputError(f"No samples for pair ({a.label}, {b.label}) under policy {policy.value}")
    correct = int((y[mask] == p[mask]).sum())
    return PairwiseAccuracy(class_a=a, class_b=b, accuracy=correct / support, support=support, policy=policy)


def _pair_row(
    labels: Sequence[object],
    predictions: Sequence[object],
    a: Her2Score,
    b: Her2Score,
    policy: OffPairPolicy,
) -> PairAccuracyRow:
    try:
        pair = adjacent_pair_accuracy(labels, predictions, a, b, policy)
    except DegenerateInputError:
        return PairAccuracyRow(
            pair=f"{a.label}/{b.label}", policy=policy, accuracy=None, accuracy_text=None, support=0
        )
    return PairAccuracyRow(
        pair=f"{a.label}/{b.label}",
        policy=policy,
        accuracy=pair.accuracy,
        accuracy_text=format_percent(pair.accuracy),
        support=pair.support,
    )


def evaluate(
    labels: Sequence[Her2Score],
    predictions: Sequence[Her2Score],
    *,
    confidence_rule: str | None = None,
) -> EvaluationReport:
    cm = confusion(labels, predictions)
    acc = accuracy(cm)
    return EvaluationReport(
        samples=cm.total,
        confidence_rule=confidence_rule,
        accuracy=acc,
        accuracy_text=format_percent(acc),
        confusion=cm.to_list(),
        per_class_recall=[
            ClassRecallRow(label=score.label, recall=recall, support=support)
            for score, recall, support in per_class_recall(cm)
        ],
        adjacent_pairs=[
            _pair_row(labels, predictions, a, b, policy)
            for policy in OffPairPolicy
            for a, b in ADJACENT_PAIRS
        ],
    )


def kcs_histogram_report(
    results: Sequence[KcsResult], labels: Mapping[str, Her2Score] | None = None
) -> dict[str, object]:
    """Per-sample histograms grouped by consensus label, in label order."""
    labels = labels or {}
    groups: dict[str, list[dict[str, object]]] = {}
    for result in results:
        label = labels.get(result.sample_id)
        key = label.label if label is not None else UNLABELED
        groups.setdefault(key, []).append(
            {
                "sample_id": result.sample_id,
                "label": label.label if label is not None else None,
                "final_score": result.final_score.label,
                "histogram": list(result.histogram),
                "k": result.k,
            }
        )
    order = [s.label for s in Her2Score] + [UNLABELED]
    rules = sorted({r.confidence_rule.value for r in results})
    return {
        "schema": REPORT_SCHEMA,
        "samples": len(results),
        "confidence_rules": rules,
        "groups": {key: groups[key] for key in order if key in groups},
    }


def histogram_csv(report: Mapping[str, object]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["sample_id", "label", "final_score", "h0", "h1", "h2", "h3"])
    for rows in report["groups"].values():  # type: ignore[union-attr]
        for row in rows:
            writer.writerow([row["sample_id"], row["label"] or "", row["final_score"], *row["histogram"]])
    return buffer.getvalue()


def result_from_report(report: CoreReport) -> KcsResult:
    selected = tuple(
        Prediction(
            probs=tuple(entry.probs),  # type: ignore[arg-type]
            argmax_score=Her2Score.parse(entry.argmax),
            confidence=entry.confidence,
            pss_index=entry.pss_index,
            sample_id=report.sample_id,
        )
        for entry in report.kcs
    )
    if sum(report.histogram) != report.k or len(report.histogram) != NUM_CLASSES:
        raise DomainError(f"Report for {report.sample_id!r} has a histogram inconsistent with k={report.k}")
    return KcsResult(
        sample_id=report.sample_id,
        n=report.n,
        k=report.k,
        confidence_rule=report.confidence_rule,
        selected=selected,
        final_score=Her2Score.parse(report.final_score),
        histogram=tuple(report.histogram),  # type: ignore[arg-type]
    )


def load_core_reports(paths: Sequence[Path]) -> list[KcsResult]:
    results = []
    for path in paths:
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise InputOutputError(f"Report not found: {path}") from e
        except OSError as e:
            raise InputOutputError(f"Cannot read {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid JSON: {e.msg}", path=str(path), line=e.lineno) from e
        try:
            results.append(result_from_report(CoreReport.model_validate(raw)))
        except ValueError as e:
            raise ParseError(f"not a core report: {e}", path=str(path)) from e
    return results


def _write_text(path: Path, text: str) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise InputOutputError(f"Cannot write {path}: {e}") from e
    return path


class EvaluationService:
    def __init__(self, settings: Settings | None = None):
        self._settings = settings or get_settings()

    def run(self, report_paths: Sequence[Path], labels: Mapping[str, Her2Score], out_dir: Path) -> EvaluationReport:
        """Writes evaluation.json, kcs_histograms.json and kcs_histograms.csv into out_dir."""
        results = load_core_reports(report_paths)
        missing = [r.sample_id for r in results if r.sample_id not in labels]
        if missing:
            logger.warning("%d scored samples have no label and are left out of the metrics", len(missing))
        scored = [r for r in results if r.sample_id in labels]
        if not scored:
            raise DegenerateInputError("No scored sample has a label")

        rules = sorted({r.confidence_rule.value for r in scored})
        evaluation = evaluate(
            [labels[r.sample_id] for r in scored],
            [r.final_score for r in scored],
            confidence_rule=",".join(rules),
        )
        histograms = kcs_histogram_report(results, labels)

        _write_text(
            out_dir / "evaluation.json",
            json.dumps(evaluation.model_dump(mode="json", by_alias=True), indent=2) + "\n",
        )
        _write_text(out_dir / "kcs_histograms.json", json.dumps(histograms, indent=2) + "\n")
        _write_text(out_dir / "kcs_histograms.csv", histogram_csv(histograms))
        logger.info(
            f"Evaluated {evaluation.samples} samples: accuracy {evaluation.accuracy_text}; reports in {out_dir}"
        )
        return evaluation
