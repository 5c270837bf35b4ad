"""Raster helpers: resampling, dihedral symmetries and image file I/O.

A raster is a uint8 numpy array shaped (height, width, channels) with
1 or 3 channels. Every function here is pure and returns a new array.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import tifffile
from numpy.typing import NDArray
from PIL import Image

from her2pss.core.errors import DegenerateInputError, InputOutputError, ShapeError
from her2pss.models.imaging import DihedralTransform

logger = logging.getLogger(__name__)

Raster = NDArray[np.uint8]

WHITE = 255
_ROW_CHUNK = 1024
_TIFF_SUFFIXES = {".tif", ".tiff"}

# Slides and 10k-pixel cores are trusted inputs, far above Pillow's bomb guard.
Image.MAX_IMAGE_PIXELS = None


def ensure_raster(img: np.ndarray) -> Raster:
    arr = np.asarray(img)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ShapeError(f"Expected an H x W x C raster with C in (1, 3), got shape {arr.shape}")
    if arr.dtype != np.uint8:
        raise ShapeError(f"Expected 8-bit samples, got dtype {arr.dtype}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DegenerateInputError(f"Raster has zero area: {arr.shape}")
    return arr


def downsample_2x(img: np.ndarray) -> Raster:
    """Mean of each 2x2 block, rounded half away from zero; odd trailing row/column dropped."""
    img = ensure_raster(img)
    height, width, channels = img.shape
    if height < 2 or width < 2:
        raise DegenerateInputError(f"Cannot 2x-downsample a {height}x{width} raster")

    out_h, out_w = height // 2, width // 2
    out = np.empty((out_h, out_w, channels), dtype=np.uint8)
    for start in range(0, out_h, _ROW_CHUNK):
        stop = min(out_h, start + _ROW_CHUNK)
        block = img[2 * start: 2 * stop, : 2 * out_w].reshape(stop - start, 2, out_w, 2, channels)
        total = block.sum(axis=(1, 3), dtype=np.uint16)
        out[start:stop] = (total + 2) // 4
    return out


def _to_pil(img: Raster) -> Image.Image:
    if img.shape[2] == 1:
        return Image.fromarray(np.ascontiguousarray(img[:, :, 0]))
    return Image.fromarray(np.ascontiguousarray(img))


def _from_pil(image: Image.Image, channels: int) -> Raster:
    arr = np.asarray(image, dtype=np.uint8)
    if channels == 1:
        arr = arr[:, :, None]
    return np.ascontiguousarray(arr)


def resize_to(img: np.ndarray, target: int) -> Raster:
    """Resample to target x target: box (area) filter when shrinking an axis, bilinear when enlarging."""
    img = ensure_raster(img)
    if target < 1:
        raise DegenerateInputError(f"Resize target must be >= 1, got {target}")

    height, width, channels = img.shape
    if (height, width) == (target, target):
        return img.copy()

    image = _to_pil(img)
    shrink_w, shrink_h = target <= width, target <= height
    if shrink_w and shrink_h:
        image = image.resize((target, target), resample=Image.Resampling.BOX)
    elif not shrink_w and not shrink_h:
        image = image.resize((target, target), resample=Image.Resampling.BILINEAR)
    else:
        # Mixed case: one axis at a time so each gets its own filter.
        w_filter = Image.Resampling.BOX if shrink_w else Image.Resampling.BILINEAR
        h_filter = Image.Resampling.BOX if shrink_h else Image.Resampling.BILINEAR
        image = image.resize((target, height), resample=w_filter)
        image = image.resize((target, target), resample=h_filter)
    return _from_pil(image, channels)


def apply_dihedral(img: np.ndarray, transform: DihedralTransform) -> Raster:
    img = ensure_raster(img)
    if img.shape[0] != img.shape[1]:
        raise ShapeError(f"Dihedral transforms need a square raster, got {img.shape[0]}x{img.shape[1]}")

    match transform:
        case DihedralTransform.IDENTITY:
            out = img
        case DihedralTransform.ROT90:
            out = np.rot90(img, k=1, axes=(0, 1))
        case DihedralTransform.ROT180:
            out = np.rot90(img, k=2, axes=(0, 1))
        case DihedralTransform.ROT270:
            out = np.rot90(img, k=3, axes=(0, 1))
        case DihedralTransform.HFLIP:
            out = img[:, ::-1]
        case DihedralTransform.VFLIP:
            out = img[::-1]
        case DihedralTransform.TRANSPOSE:
            out = img.transpose(1, 0, 2)
        case DihedralTransform.ANTITRANSPOSE:
            out = np.rot90(img, k=2, axes=(0, 1)).transpose(1, 0, 2)
        case _:
            raise ShapeError(f"Unknown dihedral element {transform!r}")
    return np.ascontiguousarray(out)


def pad_centered(img: np.ndarray, min_height: int, min_width: int) -> tuple[Raster, tuple[int, int]]:
    """Center `img` on a white canvas at least min_height x min_width. Returns (canvas, (dy, dx))."""
    img = ensure_raster(img)
    height, width, channels = img.shape
    new_h, new_w = max(height, min_height), max(width, min_width)
    if (new_h, new_w) == (height, width):
        return img, (0, 0)
    dy, dx = (new_h - height) // 2, (new_w - width) // 2
    canvas = np.full((new_h, new_w, channels), WHITE, dtype=np.uint8)
    canvas[dy: dy + height, dx: dx + width] = img
    return canvas, (dy, dx)


def pad_to_square(img: np.ndarray) -> Raster:
    img = ensure_raster(img)
    side = max(img.shape[0], img.shape[1])
    canvas, _ = pad_centered(img, side, side)
    return canvas


def to_gray(img: np.ndarray) -> NDArray[np.float32]:
    img = ensure_raster(img)
    if img.shape[2] == 1:
        return img[:, :, 0].astype(np.float32)
    weights = np.array([0.299, 0.587, 0.114], dtype=np.float32)
    return img.astype(np.float32) @ weights


def brown_signal(img: np.ndarray) -> float:
    """Mean DAB-like signal: how far blue falls below the red/green mean, in [0, 1]."""
    img = ensure_raster(img)
    if img.shape[2] != 3:
        raise ShapeError("Brown signal needs an RGB raster")
    rgb = img.astype(np.float32)
    signal = np.clip((rgb[:, :, 0] + rgb[:, :, 1]) / 2.0 - rgb[:, :, 2], 0.0, None)
    return float(signal.mean() / 255.0)


def read_image(path: str | Path) -> Raster:
    path = Path(path)
    if not path.is_file():
        raise InputOutputError(f"Image not found: {path}")
    try:
        if path.suffix.lower() in _TIFF_SUFFIXES:
            arr = tifffile.imread(path)
        else:
            with Image.open(path) as image:
                if image.mode not in ("L", "RGB"):
                    image = image.convert("RGB")
                arr = np.asarray(image)
    except OSError as e:
        raise InputOutputError(f"Cannot read image {path}: {e}") from e

    if arr.ndim == 3 and arr.shape[2] == 4:
        arr = arr[:, :, :3]
    if arr.dtype != np.uint8:
        raise ShapeError(f"{path}: only 8-bit images are supported, got {arr.dtype}")
    logger.debug("Read %s with shape %s", path, arr.shape)
    return ensure_raster(np.ascontiguousarray(arr))


def write_png(path: str | Path, img: np.ndarray) -> Path:
    path = Path(path)
    img = ensure_raster(img)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        _to_pil(img).save(path, format="PNG")
    except OSError as e:
        raise InputOutputError(f"Cannot write {path}: {e}") from e
    return path


def write_tiff(path: str | Path, img: np.ndarray, tile: int = 256) -> Path:
    """Baseline tiled TIFF; used for synthetic slides."""
    path = Path(path)
    img = ensure_raster(img)
    data = img[:, :, 0] if img.shape[2] == 1 else img
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tifffile.imwrite(
            path,
            data,
            photometric="minisblack" if img.shape[2] == 1 else "rgb",
            tile=(tile, tile),
        )
    except OSError as e:
        raise InputOutputError(f"Cannot write {path}: {e}") from e
    return path


def write_image(path: str | Path, img: np.ndarray) -> Path:
    if Path(path).suffix.lower() in _TIFF_SUFFIXES:
        return write_tiff(path, img)
    return write_png(path, img)
