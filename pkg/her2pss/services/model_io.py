"""Model container.

    b"PSSM" | u32 version | u32 header length | JSON header | float32 arrays

Integers and floats are little-endian. The header lists the architecture,
input_channels, the PSS config the model was trained for, and each tensor's
name and shape in payload order.
"""

from __future__ import annotations

import json
import logging
import struct
from pathlib import Path

import numpy as np

from her2pss.core.errors import FormatError, InputOutputError, ShapeError
from her2pss.models.pss import PssConfig
from her2pss.services.micro_cnn import ARCHITECTURE, PARAM_NAMES, MicroCnn

logger = logging.getLogger(__name__)

MAGIC = b"PSSM"
VERSION = 1
_PREAMBLE = struct.Struct("<4sII")


def encode_model(model: MicroCnn, pss_config: PssConfig | None = None) -> bytes:
    header = {
        "architecture": list(ARCHITECTURE),
        "input_channels": model.input_channels,
        "pss": pss_config.model_dump(mode="json") if pss_config is not None else None,
        "tensors": [
            {"name": name, "shape": list(model.params[name].shape)} for name in PARAM_NAMES
        ],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(
        np.ascontiguousarray(model.params[name], dtype="<f4").tobytes() for name in PARAM_NAMES
    )
    return _PREAMBLE.pack(MAGIC, VERSION, len(header_bytes)) + header_bytes + payload


def decode_model(data: bytes) -> tuple[MicroCnn, PssConfig | None]:
    if len(data) < _PREAMBLE.size:
        raise FormatError("Model file is truncated before its header")
    magic, version, header_len = _PREAMBLE.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"Bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"Unsupported model container version {version}")

    start = _PREAMBLE.size
    if len(data) < start + header_len:
        raise FormatError("Model file is truncated inside its header")
    try:
        header = json.loads(data[start: start + header_len].decode("utf-8"))
        tensors = [(t["name"], tuple(int(d) for d in t["shape"])) for t in header["tensors"]]
        input_channels = int(header["input_channels"])
        pss_raw = header.get("pss")
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise FormatError(f"Unreadable model header: {e}") from e
    if header.get("architecture") != json.loads(json.dumps(list(ARCHITECTURE))):
        raise FormatError("Model architecture does not match this build")

    offset = start + header_len
    expected = offset + sum(4 * int(np.prod(shape)) for _, shape in tensors)
    if len(data) != expected:
        raise FormatError(
            f"Payload length mismatch: file has {len(data)} bytes, header implies {expected}"
        )

    params: dict[str, np.ndarray] = {}
    for name, shape in tensors:
        count = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
        params[name] = arr.astype(np.float32).reshape(shape)
        offset += 4 * count

    try:
        model = MicroCnn(params, input_channels)
        pss_config = PssConfig.model_validate(pss_raw) if pss_raw is not None else None
    except (ShapeError, ValueError) as e:
        raise FormatError(f"Inconsistent model header: {e}") from e
    return model, pss_config


def save_model(path: str | Path, model: MicroCnn, pss_config: PssConfig | None = None) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_model(model, pss_config))
    except OSError as e:
        raise InputOutputError(f"Cannot write model {path}: {e}") from e
    logger.info(f"Saved model ({model.input_channels} input channels) to {path}")
    return path


def load_model(path: str | Path) -> tuple[MicroCnn, PssConfig | None]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError as e:
        raise InputOutputError(f"Model not found: {path}") from e
    except OSError as e:
        raise InputOutputError(f"Cannot read model {path}: {e}") from e
    try:
        return decode_model(data)
    except FormatError as e:
        raise FormatError(f"{path}: {e}") from e
