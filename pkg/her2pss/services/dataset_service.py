from __future__ import annotations

import json
import logging
from collections.abc import Sequence
from pathlib import Path

from pydantic import ValidationError

from her2pss.core.errors import ConfigError, InputOutputError, ParseError
from her2pss.core.rng import SeededRng, derive_seed
from her2pss.models.classifier import DatasetManifest, ManifestEntry
from her2pss.models.scores import Her2Score

logger = logging.getLogger(__name__)

# Train / validation / test core counts of the reference clinical dataset.
REFERENCE_SPLIT: tuple[int, int, int] = (1462, 162, 523)


def shuffled(indices: Sequence[int], rng: SeededRng) -> list[int]:
    """Fisher-Yates over a splitmix64 stream."""
    out = list(indices)
    for i in range(len(out) - 1, 0, -1):
        j = rng.below(i + 1)
        out[i], out[j] = out[j], out[i]
    return out


def split_manifest(
    entries: Sequence[ManifestEntry],
    ratios: Sequence[float] = REFERENCE_SPLIT,
    seed: int = 0,
) -> list[ManifestEntry]:
    """Stratified train/val/test assignment, proportional to `ratios`, in input order."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) <= 0:
        raise ConfigError(f"Split ratios must be three non-negative numbers, got {list(ratios)}")
    total = float(sum(ratios))
    splits: list[str] = [""] * len(entries)

    for score in Her2Score:
        members = [i for i, e in enumerate(entries) if e.score == score]
        if not members:
            continue
        members = shuffled(members, SeededRng(derive_seed(seed, int(score))))
        n_train = round(len(members) * ratios[0] / total)
        n_val = min(len(members) - n_train, round(len(members) * ratios[1] / total))
        for rank, index in enumerate(members):
            splits[index] = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"

    return [e.model_copy(update={"split": s}) for e, s in zip(entries, splits)]


def parse_ratios(text: str) -> tuple[float, float, float]:
    """`train:val:test`, e.g. `1462:162:523` or `0.7:0.1:0.2`."""
    parts = text.split(":")
    try:
        values = tuple(float(p) for p in parts)
    except ValueError as e:
        raise ConfigError(f"Bad split ratios {text!r}") from e
    if len(values) != 3:
        raise ConfigError(f"Split ratios need three parts, got {text!r}")
    return values  # type: ignore[return-value]


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as e:
        raise InputOutputError(f"Manifest not found: {path}") from e
    except OSError as e:
        raise InputOutputError(f"Cannot read {path}: {e}") from e
    try:
        return DatasetManifest.model_validate_json(text)
    except ValidationError as e:
        raise ParseError(f"invalid manifest: {e.errors()[0]['msg']}", path=str(path)) from e


def save_manifest(path: str | Path, manifest: DatasetManifest) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(manifest.model_dump(mode="json"), indent=2) + "\n", encoding="utf-8")
    except OSError as e:
        raise InputOutputError(f"Cannot write {path}: {e}") from e
    return path
