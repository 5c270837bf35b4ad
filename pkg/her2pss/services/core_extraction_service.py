"""Tissue-core detection on TMA slides with a two-stage gradient Hough transform.

Stage 1: every edge pixel votes for centers along its gradient line, at
each candidate radius and on both sides of the edge. Stage 2: for each
center peak, a histogram of edge distances picks the radius, and a
weighted algebraic circle fit over the edge pixels near that radius
refines center and radius to sub-pixel accuracy.

Voting runs on a grayscale proxy block-averaged by `working_downsample`;
coordinates are mapped back to full resolution.
"""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray
from scipy import ndimage

from her2pss.core.errors import DegenerateInputError, InputOutputError
from her2pss.core.settings import Settings, get_settings
from her2pss.models.hough import CircleDetection, HoughParams
from her2pss.services.imaging import WHITE, Raster, ensure_raster, read_image, to_gray, write_png

logger = logging.getLogger(__name__)

_STRIP_ROWS = 256
_RADIAL_ALIGNMENT = 0.8
_FIT_BAND = 2.0
_COVERAGE_BINS = 72
_MIN_COVERAGE = 0.5


@dataclass(frozen=True)
class _Edges:
    ys: NDArray[np.intp]
    xs: NDArray[np.intp]
    ux: NDArray[np.float64]
    uy: NDArray[np.float64]
    magnitude: NDArray[np.float64]


def _block_mean(gray: NDArray[np.float32], factor: int) -> NDArray[np.float64]:
    if factor == 1:
        return gray.astype(np.float64)
    height, width = gray.shape[0] // factor, gray.shape[1] // factor
    trimmed = gray[: height * factor, : width * factor]
    return trimmed.reshape(height, factor, width, factor).mean(axis=(1, 3), dtype=np.float64)


def _find_edges(gray: NDArray[np.float64], threshold: float) -> _Edges:
    # Sobel responds with 4x the step height; divide so the threshold is in gray levels.
    gx = ndimage.sobel(gray, axis=1, mode="nearest") / 4.0
    gy = ndimage.sobel(gray, axis=0, mode="nearest") / 4.0
    magnitude = np.hypot(gx, gy)
    mask = magnitude > max(threshold, 1e-9)
    ys, xs = np.nonzero(mask)
    mag = magnitude[ys, xs]
    return _Edges(ys=ys, xs=xs, ux=gx[ys, xs] / mag, uy=gy[ys, xs] / mag, magnitude=mag)


def _vote_strip(
    edges: _Edges, selection: slice, radii: NDArray[np.int64], shape: tuple[int, int]
) -> NDArray[np.int64]:
    height, width = shape
    ys = edges.ys[selection].astype(np.float64)
    xs = edges.xs[selection].astype(np.float64)
    ux, uy = edges.ux[selection], edges.uy[selection]
    acc = np.zeros(height * width, dtype=np.int64)
    for sign in (-1.0, 1.0):
        for r in radii:
            cx = np.rint(xs + sign * r * ux).astype(np.int64)
            cy = np.rint(ys + sign * r * uy).astype(np.int64)
            inside = (cx >= 0) & (cx < width) & (cy >= 0) & (cy < height)
            acc += np.bincount(cy[inside] * width + cx[inside], minlength=height * width)
    return acc


def _accumulate_centers(
    edges: _Edges, radii: NDArray[np.int64], shape: tuple[int, int], workers: int
) -> NDArray[np.int64]:
    """Center votes, summed over row strips; integer sums make the result strip-independent."""
    if edges.ys.size == 0:
        return np.zeros(shape, dtype=np.int64)
    # Edges come out of np.nonzero in row-major order, so row strips are contiguous ranges.
    bounds = np.searchsorted(edges.ys, np.arange(0, shape[0] + _STRIP_ROWS, _STRIP_ROWS))
    strips = [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    if workers > 1 and len(strips) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda s: _vote_strip(edges, s, radii, shape), strips))
    else:
        parts = [_vote_strip(edges, s, radii, shape) for s in strips]
    return np.sum(parts, axis=0).reshape(shape)


def _fit_circle(
    xs: NDArray[np.float64], ys: NDArray[np.float64], weights: NDArray[np.float64]
) -> tuple[float, float, float] | None:
    """Weighted algebraic (Kasa) circle fit. Inputs should be centered near the circle."""
    if xs.size < 3:
        return None
    sw = np.sqrt(weights)
    design = np.column_stack([xs, ys, np.ones_like(xs)]) * sw[:, None]
    target = -(xs ** 2 + ys ** 2) * sw
    solution, *_ = np.linalg.lstsq(design, target, rcond=None)
    d, e, f = solution
    cx, cy = -d / 2.0, -e / 2.0
    r_sq = cx * cx + cy * cy - f
    if not np.isfinite(r_sq) or r_sq <= 0:
        return None
    return float(cx), float(cy), float(math.sqrt(r_sq))


def _refine(
    edges: _Edges, cx: int, cy: int, r_lo: float, r_hi: float
) -> tuple[float, float, float] | None:
    dx = edges.xs - cx
    dy = edges.ys - cy
    near = (np.abs(dx) <= r_hi + 2) & (np.abs(dy) <= r_hi + 2)
    if not near.any():
        return None
    dx, dy = dx[near].astype(np.float64), dy[near].astype(np.float64)
    ux, uy, mag = edges.ux[near], edges.uy[near], edges.magnitude[near]
    dist = np.hypot(dx, dy)
    safe = np.maximum(dist, 1e-9)
    radial = np.abs(ux * dx / safe + uy * dy / safe) >= _RADIAL_ALIGNMENT
    in_range = radial & (dist >= r_lo) & (dist <= r_hi)
    if not in_range.any():
        return None

    lo, hi = int(math.floor(r_lo)), int(math.ceil(r_hi)) + 1
    hist, bin_edges = np.histogram(dist[in_range], bins=np.arange(lo, hi + 1), weights=mag[in_range])
    peak = int(np.argmax(hist))
    r_peak = (bin_edges[peak] + bin_edges[peak + 1]) / 2.0

    band = radial & (np.abs(dist - r_peak) <= _FIT_BAND)
    fit = _fit_circle(dx[band], dy[band], mag[band])
    if fit is None:
        return None
    fx, fy, fr = fit
    # Edges near the fitted circle must span most of its perimeter.
    on_circle = np.abs(np.hypot(dx - fx, dy - fy) - fr) <= _FIT_BAND
    angles = np.arctan2(dy[on_circle] - fy, dx[on_circle] - fx)
    bins = np.floor((angles + math.pi) / (2.0 * math.pi) * _COVERAGE_BINS).astype(np.intp) % _COVERAGE_BINS
    if np.unique(bins).size < _MIN_COVERAGE * _COVERAGE_BINS:
        return None
    return cx + fx, cy + fy, fr


def _suppress(
    detections: list[CircleDetection], min_distance: float
) -> list[CircleDetection]:
    kept: list[CircleDetection] = []
    for det in sorted(detections, key=lambda d: (-d.accumulator_score, d.cy, d.cx)):
        if all(math.hypot(det.cx - k.cx, det.cy - k.cy) >= min_distance for k in kept):
            kept.append(det)
    return kept


def detect_cores(slide: np.ndarray, params: HoughParams, *, workers: int = 1) -> list[CircleDetection]:
    """Circular cores sorted by descending accumulator score, non-maximum suppressed."""
    slide = ensure_raster(slide)
    height, width = slide.shape[:2]
    if height < 2 * params.r_min or width < 2 * params.r_min:
        raise DegenerateInputError(
            f"Slide {width}x{height} is smaller than one core of radius {params.r_min}"
        )

    started = time.perf_counter()
    d = params.working_downsample
    gray = _block_mean(to_gray(slide), d)
    if gray.shape[0] < 3 or gray.shape[1] < 3:
        raise DegenerateInputError(f"Working image too small at downsample {d}: {gray.shape}")

    edges = _find_edges(gray, params.edge_threshold)
    if edges.ys.size == 0:
        logger.info("No edges above threshold %.1f; blank slide", params.edge_threshold)
        return []

    r_lo, r_hi = params.r_min / d, params.r_max / d
    radii = np.arange(max(1, math.floor(r_lo)), math.ceil(r_hi) + 1, dtype=np.int64)
    acc = _accumulate_centers(edges, radii, gray.shape, workers)

    # Score = votes in the 3x3 window around a pixel.
    score = ndimage.uniform_filter(acc.astype(np.float64), size=3, mode="constant") * 9.0
    min_dist_w = params.min_center_distance / d
    window = max(3, 2 * int(math.ceil(min_dist_w)) + 1)
    peaks = (score == ndimage.maximum_filter(score, size=window, mode="constant")) & (
        score >= params.votes_threshold()
    ) & (score > 0)
    peak_ys, peak_xs = np.nonzero(peaks)

    candidates: list[CircleDetection] = []
    for py, px in zip(peak_ys.tolist(), peak_xs.tolist()):
        refined = _refine(edges, px, py, r_lo, r_hi)
        if refined is None:
            continue
        fx, fy, fr = refined
        candidates.append(
            CircleDetection(
                cx=fx * d + (d - 1) / 2.0,
                cy=fy * d + (d - 1) / 2.0,
                radius=fr * d,
                accumulator_score=float(round(score[py, px], 6)),
            )
        )

    detections = [_clamp(det, params, width, height) for det in candidates]
    detections = _suppress(detections, params.min_center_distance)

    logger.info(
        "Detected %d cores on %dx%d slide (downsample %d, %d edges, %d peaks) in %.2fs",
        len(detections),
        width,
        height,
        d,
        edges.ys.size,
        len(candidates),
        time.perf_counter() - started,
    )
    return detections


def _clamp(det: CircleDetection, params: HoughParams, width: int, height: int) -> CircleDetection:
    radius = min(max(det.radius, float(params.r_min)), float(params.r_max))
    radius = min(radius, width / 2.0, height / 2.0)
    cx = min(max(det.cx, radius), width - radius)
    cy = min(max(det.cy, radius), height - radius)
    return CircleDetection(cx=cx, cy=cy, radius=radius, accumulator_score=det.accumulator_score)


def crop_core(slide: np.ndarray, det: CircleDetection, margin_fraction: float = 0.0) -> Raster:
    """Square crop of side 2r(1+margin) centered on the detection; off-slide pixels are white."""
    slide = ensure_raster(slide)
    height, width, channels = slide.shape
    side = max(1, int(round(2.0 * det.radius * (1.0 + margin_fraction))))
    top = int(round(det.cy)) - side // 2
    left = int(round(det.cx)) - side // 2

    out = np.full((side, side, channels), WHITE, dtype=np.uint8)
    y0, y1 = max(0, top), min(height, top + side)
    x0, x1 = max(0, left), min(width, left + side)
    if y1 > y0 and x1 > x0:
        out[y0 - top: y1 - top, x0 - left: x1 - left] = slide[y0:y1, x0:x1]
    return out


class CoreExtractionService:
    def __init__(self, settings: Settings | None = None):
        self._settings = settings or get_settings()

    def extract(
        self,
        wsi_path: Path,
        out_dir: Path,
        params: HoughParams,
        margin_fraction: float = 0.05,
    ) -> list[Path]:
        """Detect cores, write `<stem>_core<i>.png` crops and `<stem>_detections.jsonl`."""
        slide = read_image(wsi_path)
        detections = detect_cores(slide, params, workers=self._settings.threads)

        try:
            out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise InputOutputError(f"Cannot create output directory {out_dir}: {e}") from e

        stem = wsi_path.stem
        written: list[Path] = []
        for index, det in enumerate(detections):
            crop = crop_core(slide, det, margin_fraction)
            written.append(write_png(out_dir / f"{stem}_core{index}.png", crop))

        lines = "".join(
            json.dumps(det.to_json_dict(), separators=(",", ":")) + "\n" for det in detections
        )
        detections_path = out_dir / f"{stem}_detections.jsonl"
        try:
            detections_path.write_text(lines, encoding="utf-8")
        except OSError as e:
            raise InputOutputError(f"Cannot write {detections_path}: {e}") from e

        logger.info(f"Extracted {len(written)} cores from {wsi_path} into {out_dir}")
        return written
