"""Micro-CNN training on PSS tensors with class-weighted cross-entropy.

Each epoch every training core is augmented with a fresh dihedral element
and sampled into a fresh PSS; both come from seeds derived from
(train seed, epoch, core index). Validation PSSs are drawn once and
reused so validation loss is comparable across epochs.
"""

from __future__ import annotations

import csv
import logging
import time
from collections.abc import Callable, Sequence
from concurrent.futures import Executor, ThreadPoolExecutor
from pathlib import Path

import numpy as np

from her2pss.core.errors import ConfigError, InputOutputError
from her2pss.core.rng import SeededRng, derive_seed
from her2pss.core.settings import Settings, get_settings
from her2pss.models.classifier import ClassWeights, DatasetManifest, EpochLog, ManifestEntry, TrainConfig
from her2pss.models.pss import PssConfig
from her2pss.models.scores import NUM_CLASSES
from her2pss.services.dataset_service import load_manifest, shuffled
from her2pss.services.imaging import Raster, read_image
from her2pss.services.micro_cnn import (
    AdamW,
    MicroCnn,
    backward_and_step,
    inverse_frequency_weights,
    weighted_cross_entropy,
)
from her2pss.services.model_io import save_model
from her2pss.services.pss_service import augment_core, build_pss

logger = logging.getLogger(__name__)

_VAL_STREAM = 0x56414C


def _map(executor: Executor | None, fn: Callable, items: Sequence) -> list:
    if executor is None:
        return [fn(item) for item in items]
    return list(executor.map(fn, items))


def class_weights_for(entries: Sequence[ManifestEntry]) -> ClassWeights:
    counts = np.bincount([int(e.score) for e in entries], minlength=NUM_CLASSES)
    if np.any(counts == 0):
        logger.warning("Training split lacks classes %s; counting them once", np.flatnonzero(counts == 0).tolist())
    return inverse_frequency_weights(np.maximum(counts, 1).tolist())


def _evaluate(
    model: MicroCnn, x: np.ndarray, labels: np.ndarray, weights: ClassWeights, batch_size: int
) -> tuple[float, float]:
    probs = np.concatenate(
        [model.probabilities(x[i: i + batch_size]) for i in range(0, len(x), batch_size)]
    )
    loss = weighted_cross_entropy(probs, labels, weights)
    acc = float((probs.argmax(axis=1) == labels).mean())
    return loss, acc


def train(
    manifest: DatasetManifest,
    cfg: TrainConfig,
    pss_cfg: PssConfig,
    *,
    base_dir: Path = Path("."),
    workers: int = 1,
) -> tuple[MicroCnn, list[EpochLog]]:
    """Returns the best-validation-loss model and one log row per epoch."""
    train_entries, val_entries = manifest.split("train"), manifest.split("val")
    if not train_entries:
        raise ConfigError("Manifest has no training cores")
    if not val_entries:
        raise ConfigError("Manifest has no validation cores")

    dtype = np.float64 if cfg.precision == "float64" else np.float32
    model = MicroCnn.initialize(pss_cfg.stacked_channels, cfg.seed, dtype=dtype)
    if cfg.max_epochs == 0:
        return model, []

    started = time.perf_counter()
    executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        def _load(entry: ManifestEntry) -> Raster:
            return read_image(base_dir / entry.path)

        train_cores = _map(executor, _load, train_entries)
        val_cores = _map(executor, _load, val_entries)
        train_labels = np.array([int(e.score) for e in train_entries], dtype=np.intp)
        val_labels = np.array([int(e.score) for e in val_entries], dtype=np.intp)
        weights = class_weights_for(train_entries)
        logger.info(
            "Training on %d cores (%d validation), %d input channels, class weights %s",
            len(train_entries),
            len(val_entries),
            pss_cfg.stacked_channels,
            [round(w, 4) for w in weights.w],
        )

        val_x = np.stack(
            _map(
                executor,
                lambda i: build_pss(val_cores[i], pss_cfg, derive_seed(cfg.seed, _VAL_STREAM, i)).stacked(),
                range(len(val_cores)),
            )
        )

        def _train_sample(epoch: int) -> Callable[[int], np.ndarray]:
            def _build(index: int) -> np.ndarray:
                rng = SeededRng(derive_seed(cfg.seed, epoch, index))
                core = augment_core(train_cores[index], rng)
                return build_pss(core, pss_cfg, rng.next_u64()).stacked()

            return _build

        optimizer = AdamW(lr=cfg.initial_lr, weight_decay=cfg.weight_decay)
        best_model, best_val = model.copy(), float("inf")
        bad_epochs = 0
        log: list[EpochLog] = []

        for epoch in range(1, cfg.max_epochs + 1):
            epoch_lr = optimizer.lr
            order = shuffled(range(len(train_cores)), SeededRng(derive_seed(cfg.seed, epoch)))
            build = _train_sample(epoch)
            loss_sum = 0.0
            for start in range(0, len(order), cfg.batch_size):
                batch_idx = order[start: start + cfg.batch_size]
                x = np.stack(_map(executor, build, batch_idx))
                _, loss = backward_and_step(model, x, train_labels[batch_idx], weights, optimizer)
                loss_sum += loss * len(batch_idx)

            train_loss = loss_sum / len(order)
            val_loss, val_acc = _evaluate(model, val_x, val_labels, weights, cfg.batch_size)
            log.append(EpochLog(epoch=epoch, train_loss=train_loss, val_loss=val_loss, lr=epoch_lr, val_accuracy=val_acc))
            logger.info(
                "epoch %d: train_loss=%.5f val_loss=%.5f val_acc=%.3f lr=%.2e",
                epoch,
                train_loss,
                val_loss,
                val_acc,
                epoch_lr,
            )

            if val_loss < best_val:
                best_val, best_model, bad_epochs = val_loss, model.copy(), 0
            else:
                bad_epochs += 1
                if bad_epochs >= cfg.plateau_patience:
                    optimizer.lr = max(optimizer.lr * cfg.lr_factor, cfg.lr_floor)
                    bad_epochs = 0
                    logger.info("Validation loss plateaued; learning rate now %.2e", optimizer.lr)
    finally:
        if executor is not None:
            executor.shutdown()

    logger.info(
        "Training finished after %d epochs in %.1fs; best val_loss=%.5f",
        cfg.max_epochs,
        time.perf_counter() - started,
        best_val,
    )
    return best_model, log


def write_training_log(path: str | Path, log: Sequence[EpochLog]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "train_loss", "val_loss", "lr"])
            for row in log:
                writer.writerow([row.epoch, f"{row.train_loss:.6f}", f"{row.val_loss:.6f}", f"{row.lr:.6g}"])
    except OSError as e:
        raise InputOutputError(f"Cannot write {path}: {e}") from e
    return path


class TrainingService:
    def __init__(self, settings: Settings | None = None):
        self._settings = settings or get_settings()

    def run(
        self,
        manifest_path: Path,
        model_out: Path,
        cfg: TrainConfig,
        pss_cfg: PssConfig,
        *,
        log_out: Path | None = None,
    ) -> list[EpochLog]:
        manifest = load_manifest(manifest_path)
        model, log = train(
            manifest,
            cfg,
            pss_cfg,
            base_dir=manifest_path.parent,
            workers=self._settings.threads,
        )
        save_model(model_out, model, pss_cfg)
        write_training_log(log_out or model_out.with_suffix(".log.csv"), log)
        return log
