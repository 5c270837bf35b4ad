"""Synthetic IHC cores and TMA slides.

Cores are white-background disks of hematoxylin-toned tissue laid out as a
jittered grid of cells. A stained cell gets a brown (DAB-like) membrane
ring: brown means blue well below red/green. Stain intensity and the share
of stained cells grow with the HER2 class, so a small classifier can
separate the classes.
"""

from __future__ import annotations

import json
import logging
import math
import time
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from her2pss.core.errors import CapacityError, ConfigError, DegenerateInputError, InputOutputError
from her2pss.core.rng import SeededRng, derive_seed
from her2pss.core.settings import Settings, get_settings
from her2pss.models.classifier import DatasetManifest, ManifestEntry
from her2pss.models.imaging import CircleTruth, SyntheticCoreSpec
from her2pss.models.scores import NUM_CLASSES, Her2Score
from her2pss.services.dataset_service import REFERENCE_SPLIT, save_manifest, split_manifest
from her2pss.services.imaging import WHITE, Raster, write_image, write_png

logger = logging.getLogger(__name__)

_TISSUE_RGB = np.array([206.0, 194.0, 224.0], dtype=np.float32)
_NUCLEUS_RGB = np.array([118.0, 108.0, 172.0], dtype=np.float32)
_DAB_RGB = np.array([150.0, 96.0, 44.0], dtype=np.float32)

_CELL_SPACING = 14
_NUCLEUS_RADIUS = 2.2
_MEMBRANE_HALF_WIDTH = 1.3
_BAND_ROWS = 256


def generate_synthetic_core(spec: SyntheticCoreSpec) -> Raster:
    rng = np.random.default_rng(spec.texture_seed)

    diameter = spec.diameter
    border = max(4, diameter // 16)
    side = diameter + 2 * border
    centre = (side - 1) / 2.0
    radius = diameter / 2.0

    cells = side // _CELL_SPACING + 1
    # Per-cell draws, taken in a fixed order so the image depends only on the spec.
    jitter = rng.uniform(-3.0, 3.0, size=(cells, cells, 2)).astype(np.float32)
    membrane_radius = rng.uniform(4.2, 5.8, size=(cells, cells)).astype(np.float32)
    tone = rng.normal(0.0, 5.0, size=(cells, cells)).astype(np.float32)
    stained = rng.uniform(size=(cells, cells)) < spec.stain_coverage_fraction
    strength = np.clip(
        spec.stain_intensity_mean + rng.normal(0.0, 0.08, size=(cells, cells)), 0.0, 1.0
    ).astype(np.float32)
    strength = np.where(stained, strength, 0.0).astype(np.float32)

    out = np.full((side, side, 3), WHITE, dtype=np.uint8)
    xs = np.arange(side, dtype=np.float32)
    cell_x = (xs // _CELL_SPACING).astype(np.intp)

    for top in range(0, side, _BAND_ROWS):
        bottom = min(side, top + _BAND_ROWS)
        ys = np.arange(top, bottom, dtype=np.float32)
        cell_y = (ys // _CELL_SPACING).astype(np.intp)
        yy, xx = ys[:, None], xs[None, :]
        cy_idx, cx_idx = cell_y[:, None], cell_x[None, :]

        tissue = (yy - centre) ** 2 + (xx - centre) ** 2 <= radius ** 2
        if not tissue.any():
            continue

        cell_cy = cy_idx * _CELL_SPACING + _CELL_SPACING / 2.0 + jitter[cy_idx, cx_idx, 0]
        cell_cx = cx_idx * _CELL_SPACING + _CELL_SPACING / 2.0 + jitter[cy_idx, cx_idx, 1]
        dist = np.hypot(yy - cell_cy, xx - cell_cx)

        nucleus = (dist < _NUCLEUS_RADIUS).astype(np.float32) * 0.6
        ring = np.abs(dist - membrane_radius[cy_idx, cx_idx]) < _MEMBRANE_HALF_WIDTH
        dab = ring * strength[cy_idx, cx_idx]

        # Tone shifts all channels equally, so it never creates brown signal.
        base = _TISSUE_RGB + tone[cy_idx, cx_idx][:, :, None]
        pixel = base * (1.0 - nucleus[:, :, None]) + _NUCLEUS_RGB * nucleus[:, :, None]
        pixel = pixel * (1.0 - dab[:, :, None]) + _DAB_RGB * dab[:, :, None]
        pixel = np.clip(np.floor(pixel + 0.5), 0, 255).astype(np.uint8)

        band = out[top:bottom]
        band[tissue] = pixel[tissue]

    logger.debug(
        "Synthetic core class=%s diameter=%d seed=%d",
        spec.class_label.label,
        diameter,
        spec.texture_seed,
    )
    return out


def generate_synthetic_wsi(
    n_cores: int,
    radius: int,
    seed: int,
    *,
    width: int | None = None,
    height: int | None = None,
) -> tuple[Raster, list[CircleTruth]]:
    """A white slide with `n_cores` non-overlapping tissue disks on a jittered grid."""
    if n_cores < 0:
        raise DegenerateInputError(f"n_cores must be >= 0, got {n_cores}")
    if radius < 4:
        raise DegenerateInputError(f"radius must be >= 4, got {radius}")

    cell = int(math.ceil(2.5 * radius))
    cols = max(1, math.ceil(math.sqrt(n_cores)))
    rows = max(1, math.ceil(n_cores / cols))
    width = width if width is not None else cols * cell
    height = height if height is not None else rows * cell

    cols_fit, rows_fit = width // cell, height // cell
    if cols_fit * rows_fit < n_cores:
        raise CapacityError(
            f"{n_cores} cores of radius {radius} do not fit on a {width}x{height} slide "
            f"(capacity {cols_fit * rows_fit})"
        )

    slide = np.full((height, width, 3), WHITE, dtype=np.uint8)
    truth: list[CircleTruth] = []
    rng = SeededRng(seed)
    max_jitter = (cell - 2 * radius) // 2 - 1

    for index in range(n_cores):
        row, col = divmod(index, cols_fit)
        jx = rng.below(2 * max_jitter + 1) - max_jitter if max_jitter > 0 else 0
        jy = rng.below(2 * max_jitter + 1) - max_jitter if max_jitter > 0 else 0
        cx = col * cell + cell // 2 + jx
        cy = row * cell + cell // 2 + jy
        _paint_disk(slide, cx, cy, radius, derive_seed(seed, index))
        truth.append(CircleTruth(cx=cx, cy=cy, r=radius))

    logger.info("Synthetic slide %dx%d with %d cores (radius %d)", width, height, n_cores, radius)
    return slide, truth


def _paint_disk(slide: Raster, cx: int, cy: int, radius: int, seed: int) -> None:
    rng = np.random.default_rng(seed)
    tint = rng.uniform(0.0, 30.0)
    colour = np.array([200.0, 168.0, 206.0], dtype=np.float32) - tint

    top, left = cy - radius, cx - radius
    size = 2 * radius + 1
    yy, xx = np.mgrid[0:size, 0:size]
    disk = (yy - radius) ** 2 + (xx - radius) ** 2 <= radius ** 2
    noise = rng.normal(0.0, 6.0, size=(size, size, 1)).astype(np.float32)
    pixels = np.clip(np.floor(colour + noise + 0.5), 0, 255).astype(np.uint8)

    region = slide[top: top + size, left: left + size]
    region[disk] = pixels[disk]


class SyntheticService:
    def __init__(self, settings: Settings | None = None):
        self._settings = settings or get_settings()

    def write_dataset(
        self,
        out_dir: Path,
        *,
        classes: int = NUM_CLASSES,
        per_class: int = 50,
        diameter: int = 512,
        seed: int = 0,
        ratios: Sequence[float] = REFERENCE_SPLIT,
    ) -> Path:
        """PNG cores for the first `classes` scores plus a split `manifest.json`. Returns the manifest path."""
        if not 1 <= classes <= NUM_CLASSES:
            raise ConfigError(f"classes must be in 1..{NUM_CLASSES}, got {classes}")
        if per_class < 1:
            raise ConfigError(f"per_class must be >= 1, got {per_class}")

        jobs = [(Her2Score(c), j) for c in range(classes) for j in range(per_class)]

        def _render(job: tuple[Her2Score, int]) -> ManifestEntry:
            score, j = job
            spec = SyntheticCoreSpec.for_class(
                score, diameter=diameter, texture_seed=derive_seed(seed, int(score), j)
            )
            name = f"core_{int(score)}_{j:04d}.png"
            write_png(out_dir / name, generate_synthetic_core(spec))
            return ManifestEntry(sample_id=Path(name).stem, path=Path(name), score=score, split="train")

        started = time.perf_counter()
        workers = self._settings.threads
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                entries = list(pool.map(_render, jobs))
        else:
            entries = [_render(job) for job in jobs]

        manifest = DatasetManifest(cores=split_manifest(entries, ratios, seed))
        path = save_manifest(out_dir / "manifest.json", manifest)
        logger.info(
            "Wrote %d synthetic cores (train %d / val %d / test %d) to %s in %.1fs",
            len(entries),
            len(manifest.split("train")),
            len(manifest.split("val")),
            len(manifest.split("test")),
            out_dir,
            time.perf_counter() - started,
        )
        return path

    def write_wsi(self, out_path: Path, *, n_cores: int, radius: int, seed: int) -> tuple[Path, Path]:
        """Slide image (PNG or TIFF by suffix) plus `<stem>_truth.json`."""
        slide, truth = generate_synthetic_wsi(n_cores, radius, seed)
        write_image(out_path, slide)
        truth_path = out_path.with_name(f"{out_path.stem}_truth.json")
        try:
            truth_path.write_text(
                json.dumps([t.model_dump() for t in truth], separators=(",", ":")) + "\n",
                encoding="utf-8",
            )
        except OSError as e:
            raise InputOutputError(f"Cannot write {truth_path}: {e}") from e
        return out_path, truth_path
