"""Top-k-confidence max-aggregation scoring of one core."""

from __future__ import annotations

import json
import logging
import time
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from her2pss.core.errors import ArityError, ConfigError, InputOutputError, ShapeError
from her2pss.core.settings import Settings, get_settings
from her2pss.models.classifier import Prediction
from her2pss.models.inference import (
    CoreReport,
    InferenceConfig,
    KcsEntry,
    KcsResult,
    PatchOrigin,
    PssOrigin,
)
from her2pss.models.pss import PssConfig
from her2pss.models.scores import NUM_CLASSES, Her2Score
from her2pss.services.imaging import read_image
from her2pss.services.micro_cnn import MicroCnn, forward
from her2pss.services.model_io import load_model
from her2pss.services.predictions_io import load_external_predictions
from her2pss.services.pss_service import build_pss_batch

logger = logging.getLogger(__name__)


def confidence_order(pred: Prediction) -> tuple[float, int]:
    return (-pred.confidence, pred.pss_index)


def select_kcs(preds: Sequence[Prediction], k: int) -> list[Prediction]:
    """The k most confident predictions; ties go to the lower pss_index."""
    if k < 1 or k > len(preds):
        raise ArityError(f"Cannot select k={k} from {len(preds)} predictions")
    return sorted(preds, key=confidence_order)[:k]


def final_score(kcs: Sequence[Prediction]) -> Her2Score:
    if not kcs:
        raise ArityError("Final score of an empty KCS")
    return max(p.argmax_score for p in kcs)


def kcs_histogram(kcs: Sequence[Prediction]) -> tuple[int, int, int, int]:
    counts = np.bincount([int(p.argmax_score) for p in kcs], minlength=NUM_CLASSES)
    return tuple(int(c) for c in counts)  # type: ignore[return-value]


def score_predictions(
    preds: Sequence[Prediction], cfg: InferenceConfig, *, sample_id: str | None = None
) -> KcsResult:
    """Apply the protocol to the first cfg.n predictions (by pss_index)."""
    ordered = sorted(preds, key=lambda p: p.pss_index)
    if len(ordered) < cfg.n:
        raise ArityError(f"Need {cfg.n} predictions, got {len(ordered)}")
    pool = ordered[: cfg.n]
    selected = select_kcs(pool, cfg.k)
    return KcsResult(
        sample_id=sample_id if sample_id is not None else (pool[0].sample_id if pool else ""),
        n=cfg.n,
        k=cfg.k,
        confidence_rule=cfg.confidence_rule,
        selected=tuple(selected),
        final_score=final_score(selected),
        histogram=kcs_histogram(selected),
    )


def score_core(
    core: np.ndarray,
    model: MicroCnn,
    cfg: InferenceConfig,
    seed: int,
    pss_cfg: PssConfig,
    *,
    sample_id: str = "",
    workers: int = 1,
) -> KcsResult:
    """Build cfg.n PSSs from `core`, run the model on each, then select and aggregate."""
    if model.input_channels != pss_cfg.stacked_channels:
        raise ShapeError(
            f"Model expects {model.input_channels} channels, PSS config yields {pss_cfg.stacked_channels}"
        )
    started = time.perf_counter()
    batch = build_pss_batch(core, pss_cfg, seed, cfg.n, workers=workers)

    def _run(index: int) -> Prediction:
        return forward(
            model, batch[index], pss_index=index, sample_id=sample_id, rule=cfg.confidence_rule
        )

    if workers > 1 and cfg.n > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            preds = list(pool.map(_run, range(cfg.n)))
    else:
        preds = [_run(i) for i in range(cfg.n)]

    result = score_predictions(preds, cfg, sample_id=sample_id)
    logger.info(
        "Scored %s: final %s from k=%d of n=%d PSSs in %.2fs",
        sample_id or "core",
        result.final_score.label,
        cfg.k,
        cfg.n,
        time.perf_counter() - started,
    )
    return replace(result, provenance=tuple(pss.provenance for pss in batch))


def build_report(result: KcsResult, *, include_provenance: bool = False) -> CoreReport:
    provenance = None
    if include_provenance and result.provenance is not None:
        # Only the selected PSSs; their pss_index addresses result.provenance.
        provenance = [
            PssOrigin(
                pss_index=pred.pss_index,
                patches=[
                    PatchOrigin(level=int(p.level), x=p.x, y=p.y)
                    for p in result.provenance[pred.pss_index]
                ],
            )
            for pred in result.selected
        ]
    return CoreReport(
        sample_id=result.sample_id,
        n=result.n,
        k=result.k,
        confidence_rule=result.confidence_rule,
        final_score=result.final_score.label,
        kcs=[
            KcsEntry(
                pss_index=p.pss_index,
                probs=list(p.probs),
                confidence=p.confidence,
                argmax=p.argmax_score.label,
            )
            for p in result.selected
        ],
        histogram=list(result.histogram),
        provenance=provenance,
    )


def render_report(report: CoreReport) -> str:
    return json.dumps(report.model_dump(mode="json", exclude_none=True), indent=2) + "\n"


def write_report(path: str | Path, report: CoreReport) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(render_report(report), encoding="utf-8")
    except OSError as e:
        raise InputOutputError(f"Cannot write report {path}: {e}") from e
    return path


class InferenceService:
    def __init__(self, settings: Settings | None = None):
        self._settings = settings or get_settings()

    def score(
        self,
        cfg: InferenceConfig,
        pss_cfg: PssConfig | None,
        seed: int,
        *,
        core_path: Path | None = None,
        model_path: Path | None = None,
        preds_path: Path | None = None,
        sample_id: str | None = None,
        include_provenance: bool = False,
    ) -> CoreReport:
        if (model_path is None) == (preds_path is None):
            raise ConfigError("Give exactly one of a model or a predictions file")

        if model_path is not None:
            if core_path is None:
                raise ConfigError("Scoring with a model needs a core image")
            model, trained_pss = load_model(model_path)
            if pss_cfg is None:
                pss_cfg = trained_pss or PssConfig()
            elif trained_pss is not None and trained_pss != pss_cfg:
                logger.warning(
                    "PSS config differs from the one %s was trained with: %s",
                    model_path,
                    trained_pss.model_dump(),
                )
            result = score_core(
                read_image(core_path),
                model,
                cfg,
                seed,
                pss_cfg,
                sample_id=sample_id or core_path.stem,
                workers=self._settings.threads,
            )
        else:
            pool = load_external_predictions(preds_path, cfg.confidence_rule)  # type: ignore[arg-type]
            sid = sample_id or (core_path.stem if core_path is not None else None)
            if sid is None:
                if len(pool) != 1:
                    raise ConfigError(
                        f"Predictions file holds {len(pool)} samples; choose one with --sample-id"
                    )
                sid = next(iter(pool))
            if sid not in pool:
                raise ConfigError(f"No predictions for sample {sid!r} in {preds_path}")
            result = score_predictions(pool[sid], cfg, sample_id=sid)
            logger.info(f"Scored {sid} from external predictions: final {result.final_score.label}")

        return build_report(result, include_provenance=include_provenance)
