"""Reference 4-class micro-CNN over stacked PSS tensors, forward and backward in numpy.

    conv3x3/2 (16) -> relu -> conv3x3/2 (32) -> relu -> global average pool
    -> affine 32->4 -> softmax

Tensors are (batch, channels, height, width). A stride-2 3x3 convolution
with padding 1 is computed as nine shifted tensor contractions, one per
kernel tap; the backward pass walks the same taps.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from numpy.typing import DTypeLike, NDArray

from her2pss.core.errors import (
    DegenerateInputError,
    DomainError,
    ShapeError,
    TrainingDivergedError,
)
from her2pss.core.rng import derive_seed
from her2pss.models.classifier import ClassWeights, ConfidenceRule, Prediction
from her2pss.models.pss import PyramidSamplingSet
from her2pss.models.scores import NUM_CLASSES
from her2pss.services.confidence import make_prediction

logger = logging.getLogger(__name__)

LOG_CLAMP = 1e-12

ARCHITECTURE: tuple[dict[str, object], ...] = (
    {"type": "conv3x3", "stride": 2, "padding": 1, "out_channels": 16},
    {"type": "relu"},
    {"type": "conv3x3", "stride": 2, "padding": 1, "out_channels": 32},
    {"type": "relu"},
    {"type": "global_avg_pool"},
    {"type": "affine", "out_features": NUM_CLASSES},
    {"type": "softmax"},
)

PARAM_NAMES: tuple[str, ...] = (
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "fc.weight",
    "fc.bias",
)

_CONV1, _CONV2 = 16, 32


def expected_shapes(input_channels: int) -> dict[str, tuple[int, ...]]:
    return {
        "conv1.weight": (_CONV1, input_channels, 3, 3),
        "conv1.bias": (_CONV1,),
        "conv2.weight": (_CONV2, _CONV1, 3, 3),
        "conv2.bias": (_CONV2,),
        "fc.weight": (NUM_CLASSES, _CONV2),
        "fc.bias": (NUM_CLASSES,),
    }


def _taps(size: int) -> int:
    return (size - 1) // 2 + 1


def _conv_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    batch, _, height, width = x.shape
    ho, wo = _taps(height), _taps(width)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.zeros((batch, weight.shape[0], ho, wo), dtype=x.dtype)
    for i in range(3):
        for j in range(3):
            tap = xp[:, :, i: i + 2 * ho - 1: 2, j: j + 2 * wo - 1: 2]
            out += np.einsum("oc,bchw->bohw", weight[:, :, i, j], tap, optimize=True)
    out += bias[None, :, None, None]
    return out, xp


def _conv_backward(
    dout: np.ndarray, xp: np.ndarray, weight: np.ndarray, *, need_dx: bool = True
) -> tuple[np.ndarray | None, np.ndarray, np.ndarray]:
    _, _, ho, wo = dout.shape
    dweight = np.zeros_like(weight)
    dxp = np.zeros_like(xp) if need_dx else None
    for i in range(3):
        for j in range(3):
            tap = xp[:, :, i: i + 2 * ho - 1: 2, j: j + 2 * wo - 1: 2]
            dweight[:, :, i, j] = np.einsum("bohw,bchw->oc", dout, tap, optimize=True)
            if dxp is not None:
                dxp[:, :, i: i + 2 * ho - 1: 2, j: j + 2 * wo - 1: 2] += np.einsum(
                    "oc,bohw->bchw", weight[:, :, i, j], dout, optimize=True
                )
    dbias = dout.sum(axis=(0, 2, 3))
    dx = dxp[:, :, 1:-1, 1:-1] if dxp is not None else None
    return dx, dweight, dbias


def softmax(logits: np.ndarray) -> NDArray[np.float64]:
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _labels_array(labels: Sequence[int] | np.ndarray, m: int) -> NDArray[np.intp]:
    arr = np.asarray([int(v) for v in labels], dtype=np.intp)
    if arr.shape != (m,):
        raise ShapeError(f"Expected {m} labels, got {arr.shape[0]}")
    if np.any((arr < 0) | (arr >= NUM_CLASSES)):
        raise DomainError(f"Labels must lie in 0..{NUM_CLASSES - 1}")
    return arr


def weighted_cross_entropy(
    probs_batch: np.ndarray, labels: Sequence[int] | np.ndarray, weights: ClassWeights
) -> float:
    """L = -1/m * sum_i w[y_i] * log(max(p[i, y_i], 1e-12))."""
    probs = np.asarray(probs_batch, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[1] != NUM_CLASSES:
        raise ShapeError(f"Expected an m x {NUM_CLASSES} probability batch, got {probs.shape}")
    m = probs.shape[0]
    if m == 0:
        raise DegenerateInputError("Cross-entropy of an empty batch")
    if np.any(probs < 0):
        raise DomainError("Negative probability in batch")
    if np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6):
        raise DomainError("Probability rows must sum to 1")
    y = _labels_array(labels, m)
    w = np.asarray(weights.w, dtype=np.float64)
    picked = np.maximum(probs[np.arange(m), y], LOG_CLAMP)
    return float(-(w[y] * np.log(picked)).sum() / m)


def inverse_frequency_weights(class_counts: Sequence[int]) -> ClassWeights:
    """w_c = total / (C * count_c)."""
    counts = np.asarray(class_counts, dtype=np.float64)
    if counts.shape != (NUM_CLASSES,):
        raise ShapeError(f"Expected {NUM_CLASSES} class counts, got {counts.shape}")
    if np.any(counts < 1):
        raise DegenerateInputError(f"Every class needs at least one sample, got {class_counts}")
    w = counts.sum() / (NUM_CLASSES * counts)
    return ClassWeights(w=tuple(float(v) for v in w))  # type: ignore[arg-type]


@dataclass
class _Cache:
    xp0: np.ndarray
    z1: np.ndarray
    xp1: np.ndarray
    z2: np.ndarray
    pooled: np.ndarray


class MicroCnn:
    """Parameters plus forward/backward. `forward` is read-only and safe to share across threads."""

    def __init__(self, params: dict[str, np.ndarray], input_channels: int):
        shapes = expected_shapes(input_channels)
        missing = [name for name in PARAM_NAMES if name not in params]
        if missing:
            raise ShapeError(f"Missing parameters: {missing}")
        for name in PARAM_NAMES:
            if tuple(params[name].shape) != shapes[name]:
                raise ShapeError(
                    f"{name} has shape {tuple(params[name].shape)}, expected {shapes[name]}"
                )
        self.params = {name: params[name] for name in PARAM_NAMES}
        self.input_channels = input_channels

    @classmethod
    def initialize(
        cls,
        input_channels: int,
        seed: int,
        *,
        dtype: DTypeLike = np.float32,
        zero_head: bool = False,
    ) -> MicroCnn:
        """He-normal convolutions, zero biases; `zero_head` zeroes the final affine layer."""
        if input_channels < 1:
            raise ShapeError(f"input_channels must be >= 1, got {input_channels}")
        rng = np.random.default_rng(derive_seed(seed, input_channels))
        shapes = expected_shapes(input_channels)
        params: dict[str, np.ndarray] = {}
        for name in PARAM_NAMES:
            shape = shapes[name]
            if name.endswith("bias"):
                params[name] = np.zeros(shape, dtype=dtype)
            elif name == "fc.weight":
                scale = 0.0 if zero_head else np.sqrt(1.0 / shape[1])
                params[name] = (rng.standard_normal(shape) * scale).astype(dtype)
            else:
                fan_in = shape[1] * 9
                params[name] = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)
        return cls(params, input_channels)

    @property
    def dtype(self) -> np.dtype:
        return self.params["conv1.weight"].dtype

    def copy(self) -> MicroCnn:
        return MicroCnn({k: v.copy() for k, v in self.params.items()}, self.input_channels)

    def astype(self, dtype: DTypeLike) -> MicroCnn:
        return MicroCnn({k: v.astype(dtype) for k, v in self.params.items()}, self.input_channels)

    def prepare(self, stacked: np.ndarray) -> np.ndarray:
        """uint8 (B, C, S, S) or (C, S, S) -> model dtype scaled to [-1, 1]."""
        x = np.asarray(stacked)
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4:
            raise ShapeError(f"Expected a (B, C, H, W) batch, got shape {x.shape}")
        if x.shape[1] != self.input_channels:
            raise ShapeError(
                f"Input has {x.shape[1]} channels, model expects {self.input_channels}"
            )
        if x.dtype == np.uint8:
            return x.astype(self.dtype) / self.dtype.type(127.5) - self.dtype.type(1.0)
        return x.astype(self.dtype, copy=False)

    def _forward(self, x: np.ndarray) -> tuple[np.ndarray, _Cache]:
        p = self.params
        z1, xp0 = _conv_forward(x, p["conv1.weight"], p["conv1.bias"])
        h1 = np.maximum(z1, 0)
        z2, xp1 = _conv_forward(h1, p["conv2.weight"], p["conv2.bias"])
        pooled = np.maximum(z2, 0).mean(axis=(2, 3))
        logits = pooled @ p["fc.weight"].T + p["fc.bias"]
        return logits, _Cache(xp0=xp0, z1=z1, xp1=xp1, z2=z2, pooled=pooled)

    def probabilities(self, x: np.ndarray) -> NDArray[np.float64]:
        logits, _ = self._forward(self.prepare(x))
        return softmax(logits)

    def loss_and_grads(
        self, x: np.ndarray, labels: Sequence[int] | np.ndarray, weights: ClassWeights
    ) -> tuple[float, dict[str, np.ndarray]]:
        x = self.prepare(x)
        logits, cache = self._forward(x)
        probs = softmax(logits)
        m = probs.shape[0]
        y = _labels_array(labels, m)
        loss = weighted_cross_entropy(probs, y, weights)

        w = np.asarray(weights.w, dtype=np.float64)
        onehot = np.zeros_like(probs)
        onehot[np.arange(m), y] = 1.0
        dlogits = ((w[y] / m)[:, None] * (probs - onehot)).astype(self.dtype)
        return loss, self._backward(cache, dlogits)

    def _backward(self, cache: _Cache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        p = self.params
        grads: dict[str, np.ndarray] = {
            "fc.weight": dlogits.T @ cache.pooled,
            "fc.bias": dlogits.sum(axis=0),
        }
        dpooled = dlogits @ p["fc.weight"]
        area = cache.z2.shape[2] * cache.z2.shape[3]
        dz2 = np.broadcast_to((dpooled / area)[:, :, None, None], cache.z2.shape) * (cache.z2 > 0)
        dh1, grads["conv2.weight"], grads["conv2.bias"] = _conv_backward(
            dz2, cache.xp1, p["conv2.weight"]
        )
        dz1 = dh1 * (cache.z1 > 0)
        _, grads["conv1.weight"], grads["conv1.bias"] = _conv_backward(
            dz1, cache.xp0, p["conv1.weight"], need_dx=False
        )
        return {name: grads[name].astype(self.dtype, copy=False) for name in PARAM_NAMES}


def forward(
    model: MicroCnn,
    pss: PyramidSamplingSet,
    *,
    pss_index: int = 0,
    sample_id: str = "",
    rule: ConfidenceRule = ConfidenceRule.TOP1,
) -> Prediction:
    if pss.channels != model.input_channels:
        raise ShapeError(f"PSS has {pss.channels} channels, model expects {model.input_channels}")
    probs = model.probabilities(pss.stacked())[0]
    return make_prediction(probs, pss_index=pss_index, sample_id=sample_id, rule=rule)


class AdamW:
    """Adaptive moments with decoupled weight decay: p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)."""

    def __init__(
        self,
        lr: float,
        weight_decay: float = 0.0,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - self.beta1 ** t
        bias2 = 1.0 - self.beta2 ** t
        for name, grad in grads.items():
            param = params[name]
            m = self._m.setdefault(name, np.zeros_like(param))
            v = self._v.setdefault(name, np.zeros_like(param))
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps) + self.weight_decay * param
            param -= (self.lr * update).astype(param.dtype, copy=False)


def stack_batch(batch: Sequence[PyramidSamplingSet] | np.ndarray) -> np.ndarray:
    if isinstance(batch, np.ndarray):
        return batch
    if not batch:
        raise DegenerateInputError("Empty training batch")
    return np.stack([pss.stacked() for pss in batch])


def backward_and_step(
    model: MicroCnn,
    batch: Sequence[PyramidSamplingSet] | np.ndarray,
    labels: Sequence[int] | np.ndarray,
    weights: ClassWeights,
    optimizer: AdamW,
) -> tuple[MicroCnn, float]:
    """One optimizer step on `model` in place. Returns the model and the pre-step loss."""
    x = stack_batch(batch)
    if x.shape[0] == 0:
        raise DegenerateInputError("Empty training batch")
    loss, grads = model.loss_and_grads(x, labels, weights)
    if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
        raise TrainingDivergedError(f"Non-finite loss or gradient (loss={loss})")
    optimizer.step(model.params, grads)
    return model, loss
