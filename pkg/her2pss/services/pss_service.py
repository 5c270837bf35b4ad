"""Pyramid-Sampling-Set assembly.

Coordinate stream for one PSS, all from a single SeededRng(seed):

    for each full-res patch:  x = below(W0 - P + 1), then y = below(H0 - P + 1)
    for each half-res patch:  x = below(W1 - P + 1), then y = below(H1 - P + 1)

where (W0, H0) is the core and (W1, H1) its 2x downsample, each padded with
white to at least P on both sides first. The whole-core patch draws nothing.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from her2pss.core.errors import DegenerateInputError, InputOutputError, ShapeError
from her2pss.core.rng import MASK64, SeededRng, derive_seed, splitmix64
from her2pss.core.settings import Settings, get_settings
from her2pss.models.imaging import DIHEDRAL_ELEMENTS, DihedralTransform
from her2pss.models.pss import (
    PatchProvenance,
    PatchRecord,
    PssConfig,
    PssManifest,
    PyramidLevel,
    PyramidSamplingSet,
)
from her2pss.services.imaging import (
    Raster,
    apply_dihedral,
    downsample_2x,
    ensure_raster,
    pad_centered,
    pad_to_square,
    read_image,
    resize_to,
    write_png,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PyramidLevels:
    """The padded sampling levels of one core, shared by every PSS drawn from it."""

    full: Raster
    half: Raster | None
    whole: Raster | None


def build_levels(core: np.ndarray, cfg: PssConfig) -> PyramidLevels:
    core = ensure_raster(core)
    if core.shape[2] != 3:
        raise ShapeError(f"PSS sampling needs an RGB core, got {core.shape[2]} channel(s)")

    size = cfg.patch_size
    full, _ = pad_centered(core, size, size)

    half = None
    if cfg.n_half:
        if min(core.shape[0], core.shape[1]) < 2:
            raise DegenerateInputError(f"Core {core.shape[1]}x{core.shape[0]} is too small to halve")
        half, _ = pad_centered(downsample_2x(core), size, size)

    whole = resize_to(core, size) if cfg.include_whole else None

    return PyramidLevels(full=full, half=half, whole=whole)


def _draw(
    level: Raster, kind: PyramidLevel, count: int, size: int, rng: SeededRng
) -> tuple[list[np.ndarray], list[PatchProvenance]]:
    height, width = level.shape[:2]
    patches: list[np.ndarray] = []
    provenance: list[PatchProvenance] = []
    for _ in range(count):
        x = rng.below(width - size + 1)
        y = rng.below(height - size + 1)
        patches.append(level[y: y + size, x: x + size])
        provenance.append(PatchProvenance(level=kind, x=x, y=y))
    return patches, provenance


def sample_pss(levels: PyramidLevels, cfg: PssConfig, seed: int) -> PyramidSamplingSet:
    rng = SeededRng(seed)
    size = cfg.patch_size

    patches, provenance = _draw(levels.full, PyramidLevel.FULL, cfg.n_full, size, rng)
    if levels.half is not None:
        half_patches, half_prov = _draw(levels.half, PyramidLevel.HALF, cfg.n_half, size, rng)
        patches += half_patches
        provenance += half_prov
    if levels.whole is not None:
        patches.append(levels.whole)
        provenance.append(PatchProvenance(level=PyramidLevel.WHOLE, x=0, y=0))

    return PyramidSamplingSet(
        patches=tuple(patches), provenance=tuple(provenance), seed=seed & MASK64, config=cfg
    )


def build_pss(core: np.ndarray, cfg: PssConfig, seed: int) -> PyramidSamplingSet:
    return sample_pss(build_levels(core, cfg), cfg, seed)


def pss_seed(base_seed: int, index: int) -> int:
    return splitmix64((base_seed + index) & MASK64)


def build_pss_batch(
    core: np.ndarray, cfg: PssConfig, base_seed: int, n: int, *, workers: int = 1
) -> list[PyramidSamplingSet]:
    """PSS i is sampled with seed splitmix64(base_seed + i)."""
    if n <= 0:
        return []
    levels = build_levels(core, cfg)
    seeds = [pss_seed(base_seed, i) for i in range(n)]
    if workers > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda s: sample_pss(levels, cfg, s), seeds))
    return [sample_pss(levels, cfg, s) for s in seeds]


def choose_dihedral(rng: SeededRng) -> DihedralTransform:
    return DIHEDRAL_ELEMENTS[rng.below(len(DIHEDRAL_ELEMENTS))]


def augment_core(core: np.ndarray, rng: SeededRng) -> Raster:
    """Pad to square with white, then apply one uniformly drawn dihedral element."""
    return apply_dihedral(pad_to_square(core), choose_dihedral(rng))


def export_pss(pss: PyramidSamplingSet, out_dir: Path) -> Path:
    """Write `patch_000.png`... plus `pss.json`. Returns the manifest path."""
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise InputOutputError(f"Cannot create output directory {out_dir}: {e}") from e

    for index, patch in enumerate(pss.patches):
        write_png(out_dir / f"patch_{index:03d}.png", patch)

    manifest = PssManifest(
        seed=pss.seed,
        config=pss.config,
        patches=[PatchRecord(level=int(p.level), x=p.x, y=p.y) for p in pss.provenance],
    )
    manifest_path = out_dir / "pss.json"
    try:
        manifest_path.write_text(
            json.dumps(manifest.model_dump(mode="json"), indent=2) + "\n", encoding="utf-8"
        )
    except OSError as e:
        raise InputOutputError(f"Cannot write {manifest_path}: {e}") from e
    return manifest_path


class PssService:
    def __init__(self, settings: Settings | None = None):
        self._settings = settings or get_settings()

    def sample_to_dir(
        self, core_path: Path, out_dir: Path, cfg: PssConfig, seed: int, *, augment: bool = False
    ) -> Path:
        started = time.perf_counter()
        core = read_image(core_path)
        if augment:
            core = augment_core(core, SeededRng(derive_seed(seed, 1)))
        pss = build_pss(core, cfg, seed)
        manifest_path = export_pss(pss, out_dir)
        logger.info(
            "Exported PSS of %d patches (%d channels) from %s to %s in %.2fs",
            len(pss.patches),
            pss.channels,
            core_path,
            out_dir,
            time.perf_counter() - started,
        )
        return manifest_path
