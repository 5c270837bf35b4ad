"""Monte Carlo (N, k) sweeps over per-sample pools of precomputed PSS predictions.

A trial draws n predictions per sample from its pool, applies the
top-k-confidence max rule and compares with the label. Trials are
vectorized over samples: subset draws come from sorting splitmix64 keys,
and the k most confident members of a subset are the k smallest
confidence ranks within it (ranks follow the select_kcs order).
"""

from __future__ import annotations

import csv
import json
import logging
import re
import time
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from her2pss.core.errors import ArityError, ConfigError, InputOutputError, ParseError
from her2pss.core.rng import SeededRng, derive_seed
from her2pss.core.settings import Settings, get_settings
from her2pss.models.classifier import ConfidenceRule
from her2pss.models.montecarlo import REFERENCE_K_GRID, REFERENCE_N_GRID, PredictionPool, SweepStats
from her2pss.models.report import SWEEP_SCHEMA, ConfusionMatrix
from her2pss.models.scores import NUM_CLASSES, Her2Score
from her2pss.services.inference_service import confidence_order
from her2pss.services.predictions_io import load_external_predictions

logger = logging.getLogger(__name__)

_GRID_ITEM = re.compile(r"^(\d+)(?::(\d+)(?::(\d+))?)?$")
_GRID_KEYWORDS = frozenset({"paper", "reference"})


@dataclass(frozen=True)
class PoolArrays:
    """Dense per-sample view of a pool: argmax scores and confidence ranks, shape (S, P)."""

    sample_ids: tuple[str, ...]
    labels: np.ndarray
    argmax: np.ndarray
    rank: np.ndarray

    @property
    def pool_size(self) -> int:
        return int(self.argmax.shape[1])

    @classmethod
    def from_pool(cls, pool: PredictionPool) -> PoolArrays:
        size = pool.pool_size
        if any(len(p) != size for p in pool.predictions.values()):
            logger.warning("Per-sample pools differ in size; using the first %d of each", size)

        ids = tuple(pool.sample_ids)
        argmax = np.empty((len(ids), size), dtype=np.int8)
        rank = np.empty((len(ids), size), dtype=np.int32)
        for row, sid in enumerate(ids):
            preds = sorted(pool.predictions[sid], key=lambda p: p.pss_index)[:size]
            argmax[row] = [int(p.argmax_score) for p in preds]
            order = sorted(range(size), key=lambda i: confidence_order(preds[i]))
            rank[row, order] = np.arange(size, dtype=np.int32)
        labels = np.array([int(pool.labels[sid]) for sid in ids], dtype=np.intp)
        return cls(sample_ids=ids, labels=labels, argmax=argmax, rank=rank)


def _trial_counts(
    arrays: PoolArrays, n: int, k: int, rng: SeededRng, with_replacement: bool
) -> np.ndarray:
    samples, size = arrays.argmax.shape
    if with_replacement:
        draws = rng.next_block(samples * n).reshape(samples, n)
        subset = (draws % np.uint64(size)).astype(np.intp)
    else:
        keys = rng.next_block(samples * size).reshape(samples, size)
        subset = np.argsort(keys, axis=1, kind="stable")[:, :n]

    ranks = np.take_along_axis(arrays.rank, subset, axis=1)
    scores = np.take_along_axis(arrays.argmax, subset, axis=1)
    if k < n:
        top = np.argsort(ranks, axis=1, kind="stable")[:, :k]
        scores = np.take_along_axis(scores, top, axis=1)
    predicted = scores.max(axis=1).astype(np.intp)
    flat = np.bincount(arrays.labels * NUM_CLASSES + predicted, minlength=NUM_CLASSES * NUM_CLASSES)
    return flat.reshape(NUM_CLASSES, NUM_CLASSES).astype(np.int64)


def run_trial(
    pool: PredictionPool | PoolArrays,
    n: int,
    k: int,
    rng: SeededRng,
    *,
    with_replacement: bool = False,
) -> tuple[float, ConfusionMatrix]:
    arrays = pool if isinstance(pool, PoolArrays) else PoolArrays.from_pool(pool)
    if n > arrays.pool_size:
        raise ArityError(f"n={n} exceeds pool size {arrays.pool_size}")
    if not 1 <= k <= n:
        raise ArityError(f"k={k} must lie in 1..n={n}")
    counts = _trial_counts(arrays, n, k, rng, with_replacement)
    cm = ConfusionMatrix(counts)
    return cm.correct / cm.total, cm


def _run_cell(
    arrays: PoolArrays, n: int, k: int, trials: int, seed: int, with_replacement: bool
) -> SweepStats:
    correct = np.empty(trials, dtype=np.int64)
    matrices = np.empty((trials, NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    for t in range(trials):
        rng = SeededRng(derive_seed(seed, n, k, t))
        matrices[t] = _trial_counts(arrays, n, k, rng, with_replacement)
        correct[t] = np.trace(matrices[t])

    total = len(arrays.sample_ids)
    # Ties resolve to the earliest trial, so every statistic names a real trial.
    ascending = np.lexsort((np.arange(trials), correct))
    i_min = int(ascending[0])
    i_median = int(ascending[(trials - 1) // 2])
    i_max = int(np.flatnonzero(correct == correct.max())[0])
    return SweepStats(
        n=n,
        k=k,
        trials=trials,
        accuracy_min=correct[i_min] / total,
        accuracy_median=correct[i_median] / total,
        accuracy_max=correct[i_max] / total,
        confusion_at_min=ConfusionMatrix(matrices[i_min].copy()),
        confusion_at_median=ConfusionMatrix(matrices[i_median].copy()),
        confusion_at_max=ConfusionMatrix(matrices[i_max].copy()),
        accuracies=tuple(float(c) / total for c in correct),
    )


def sweep(
    pool: PredictionPool | PoolArrays,
    n_grid: Sequence[int],
    k_grid: Sequence[int],
    trials: int,
    seed: int,
    *,
    with_replacement: bool = False,
    workers: int = 1,
) -> list[SweepStats]:
    """Stats per (n, k) cell in grid order; cells with k > n are skipped."""
    if not n_grid or not k_grid:
        raise ConfigError("Sweep grids must be non-empty")
    if trials < 1:
        raise ConfigError(f"trials must be >= 1, got {trials}")
    arrays = pool if isinstance(pool, PoolArrays) else PoolArrays.from_pool(pool)
    if max(n_grid) > arrays.pool_size:
        raise ArityError(f"n={max(n_grid)} exceeds pool size {arrays.pool_size}")

    cells = [(n, k) for n in n_grid for k in k_grid if k <= n]
    skipped = len(n_grid) * len(k_grid) - len(cells)
    if skipped:
        logger.info("Skipping %d (n, k) cells with k > n", skipped)

    started = time.perf_counter()

    def _cell(nk: tuple[int, int]) -> SweepStats:
        return _run_cell(arrays, nk[0], nk[1], trials, seed, with_replacement)

    if workers > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            stats = list(executor.map(_cell, cells))
    else:
        stats = [_cell(c) for c in cells]

    logger.info(
        "Swept %d cells x %d trials over %d samples in %.2fs",
        len(cells),
        trials,
        len(arrays.sample_ids),
        time.perf_counter() - started,
    )
    return stats


def k_sweep_grid() -> list[int]:
    return list(REFERENCE_K_GRID)


def parse_grid(spec: str, reference: Sequence[int] = REFERENCE_K_GRID) -> list[int]:
    """`paper` (alias `reference`), or comma-separated items `v`, `a:b` or `a:b:step` (inclusive)."""
    text = spec.strip().lower()
    if text in _GRID_KEYWORDS:
        return list(reference)
    values: set[int] = set()
    for item in filter(None, (part.strip() for part in text.split(","))):
        match = _GRID_ITEM.match(item)
        if match is None:
            raise ConfigError(f"Bad grid item {item!r} in {spec!r}")
        start = int(match.group(1))
        stop = int(match.group(2)) if match.group(2) else start
        step = int(match.group(3)) if match.group(3) else 1
        if start < 1 or stop < start or step < 1:
            raise ConfigError(f"Bad grid range {item!r} in {spec!r}")
        values.update(range(start, stop + 1, step))
    if not values:
        raise ConfigError(f"Empty grid {spec!r}")
    return sorted(values)


def load_labels(path: str | Path) -> dict[str, Her2Score]:
    """CSV with header `sample_id,score`."""
    path = Path(path)
    labels: dict[str, Her2Score] = {}
    try:
        with path.open("r", encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"sample_id", "score"} <= set(reader.fieldnames):
                raise ParseError("expected header sample_id,score", path=str(path), line=1)
            for row in reader:
                line = reader.line_num
                sid = (row.get("sample_id") or "").strip()
                if not sid:
                    raise ParseError("empty sample_id", path=str(path), line=line)
                if sid in labels:
                    raise ParseError(f"duplicate sample_id {sid!r}", path=str(path), line=line)
                try:
                    labels[sid] = Her2Score.parse(row.get("score") or "")
                except ValueError as e:
                    raise ParseError(str(e), path=str(path), line=line) from e
    except FileNotFoundError as e:
        raise InputOutputError(f"Labels file not found: {path}") from e
    except OSError as e:
        raise InputOutputError(f"Cannot read {path}: {e}") from e
    return labels


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def write_sweep_csv(path: str | Path, stats: Iterable[SweepStats]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["n", "k", "trials", "acc_min", "acc_median", "acc_max"])
            for s in stats:
                writer.writerow(
                    [s.n, s.k, s.trials, _fmt(s.accuracy_min), _fmt(s.accuracy_median), _fmt(s.accuracy_max)]
                )
    except OSError as e:
        raise InputOutputError(f"Cannot write {path}: {e}") from e
    return path


def write_sweep_json(
    path: str | Path,
    stats: Iterable[SweepStats],
    *,
    seed: int,
    with_replacement: bool,
    confidence_rule: ConfidenceRule,
    include_accuracies: bool = False,
) -> Path:
    path = Path(path)
    cells = []
    for s in stats:
        cell: dict[str, object] = {
            "n": s.n,
            "k": s.k,
            "trials": s.trials,
            "acc_min": s.accuracy_min,
            "acc_median": s.accuracy_median,
            "acc_max": s.accuracy_max,
            "confusion_min": s.confusion_at_min.to_list(),
            "confusion_median": s.confusion_at_median.to_list(),
            "confusion_max": s.confusion_at_max.to_list(),
        }
        if include_accuracies:
            cell["accuracies"] = list(s.accuracies)
        cells.append(cell)
    document = {
        "schema": SWEEP_SCHEMA,
        "seed": seed,
        "with_replacement": with_replacement,
        "confidence_rule": confidence_rule.value,
        "cells": cells,
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(document, indent=2) + "\n", encoding="utf-8")
    except OSError as e:
        raise InputOutputError(f"Cannot write {path}: {e}") from e
    return path


class MonteCarloService:
    def __init__(self, settings: Settings | None = None):
        self._settings = settings or get_settings()

    def run(
        self,
        preds_path: Path,
        labels_path: Path,
        out_csv: Path,
        *,
        n_grid: Sequence[int] = REFERENCE_N_GRID,
        k_grid: Sequence[int] = (5,),
        trials: int,
        seed: int,
        with_replacement: bool = False,
        rule: ConfidenceRule = ConfidenceRule.TOP1,
        include_accuracies: bool = False,
    ) -> list[SweepStats]:
        predictions = load_external_predictions(preds_path, rule)
        labels = load_labels(labels_path)
        unused = [sid for sid in labels if sid not in predictions]
        if unused:
            logger.warning("%d labeled samples have no predictions and are ignored", len(unused))

        pool = PredictionPool(predictions=predictions, labels=labels)
        stats = sweep(
            pool,
            n_grid,
            k_grid,
            trials,
            seed,
            with_replacement=with_replacement,
            workers=self._settings.threads,
        )
        write_sweep_csv(out_csv, stats)
        json_path = write_sweep_json(
            out_csv.with_suffix(".json"),
            stats,
            seed=seed,
            with_replacement=with_replacement,
            confidence_rule=rule,
            include_accuracies=include_accuracies,
        )
        logger.info(f"Wrote sweep table {out_csv} and confusion matrices {json_path}")
        return stats
