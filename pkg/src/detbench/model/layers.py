"""Reference convolution forward passes and exact per-layer cost accounting.

Tensors are channels-last ``(H, W, C)`` float64 arrays. Kernels are
``(kh, kw, c_in, c_out)`` for dense/pointwise/predictor layers and
``(kh, kw, c)`` for depthwise layers.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BYTES_PER_ELEMENT = 8


class Kind(str, enum.Enum):
    CONV = "conv"
    DEPTHWISE = "depthwise"
    POINTWISE = "pointwise"
    MAXPOOL = "maxpool"
    PREDICTOR = "predictor"


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: Kind
    kernel: tuple[int, int]
    in_channels: int
    out_channels: int
    stride: int = 1
    padding: str = "same"
    relu: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if min(self.kernel) <= 0 or self.in_channels <= 0 or self.out_channels <= 0 or self.stride <= 0:
            raise ValueError(f"{self.name}: dimensions must be positive")
        if self.kind in (Kind.DEPTHWISE, Kind.MAXPOOL) and self.out_channels != self.in_channels:
            raise ValueError(f"{self.name}: {self.kind.value} layers keep the channel count")
        if self.kind is Kind.POINTWISE and tuple(self.kernel) != (1, 1):
            raise ValueError(f"{self.name}: pointwise layers use 1x1 kernels")
        if self.padding not in ("same", "valid"):
            raise ValueError(f"{self.name}: unknown padding {self.padding!r}")

    @property
    def trainable(self) -> bool:
        return self.kind is Kind.PREDICTOR

    @property
    def has_weights(self) -> bool:
        return self.kind is not Kind.MAXPOOL

    def kernel_shape(self) -> tuple[int, ...]:
        kh, kw = self.kernel
        if self.kind is Kind.DEPTHWISE:
            return (kh, kw, self.in_channels)
        return (kh, kw, self.in_channels, self.out_channels)

    def param_count(self) -> int:
        if not self.has_weights:
            return 0
        return math.prod(self.kernel_shape()) + self.out_channels


def _out_size(n: int, k: int, s: int, padding: str) -> int:
    if padding == "same":
        return -(-n // s)
    return (n - k) // s + 1


def output_shape(layer: LayerSpec, input_shape) -> tuple[int, int, int]:
    h, w = input_shape[0], input_shape[1]
    kh, kw = layer.kernel
    ho = _out_size(h, kh, layer.stride, layer.padding)
    wo = _out_size(w, kw, layer.stride, layer.padding)
    if ho <= 0 or wo <= 0:
        raise ValueError(f"{layer.name}: input {tuple(input_shape)} too small")
    return ho, wo, layer.out_channels


def _pad_amounts(n: int, k: int, s: int, padding: str) -> tuple[int, int]:
    if padding == "valid":
        return 0, 0
    out = -(-n // s)
    total = max((out - 1) * s + k - n, 0)
    return total // 2, total - total // 2


def im2col(x: np.ndarray, kernel: tuple[int, int], stride: int = 1, padding: str = "same", pad_value=0.0):
    """Extract sliding patches from ``(..., H, W, C)``; returns ``(..., Ho, Wo, kh, kw, C)``."""
    kh, kw = kernel
    h, w = x.shape[-3:-1]
    pt, pb = _pad_amounts(h, kh, stride, padding)
    pl, pr = _pad_amounts(w, kw, stride, padding)
    if pt or pb or pl or pr:
        pad = [(0, 0)] * (x.ndim - 3) + [(pt, pb), (pl, pr), (0, 0)]
        x = np.pad(x, pad, constant_values=pad_value)
    win = sliding_window_view(x, (kh, kw), axis=(-3, -2))[..., ::stride, ::stride, :, :, :]
    return np.moveaxis(win, -3, -1)


def conv_forward(x, layer: LayerSpec, weights: dict) -> np.ndarray:
    """Cross-correlation (plus bias) of ``x`` with the layer's kernel. No activation.

    ``x`` is ``(H, W, C)`` or a batch ``(N, H, W, C)``. ``weights`` holds
    ``"kernel"`` and ``"bias"``; it is ignored for max pooling.

    Raises:
        ValueError: when the input channel count or kernel shape disagrees with the layer.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (3, 4) or x.shape[-1] != layer.in_channels:
        raise ValueError(f"{layer.name}: expected (..., H, W, {layer.in_channels}) input, got {x.shape}")
    output_shape(layer, x.shape[-3:])
    if layer.kind is Kind.MAXPOOL:
        return im2col(x, layer.kernel, layer.stride, layer.padding, pad_value=-np.inf).max(axis=(-3, -2))

    kernel = np.asarray(weights["kernel"], dtype=np.float64)
    if kernel.shape != layer.kernel_shape():
        raise ValueError(f"{layer.name}: kernel shape {kernel.shape} != {layer.kernel_shape()}")
    patches = im2col(x, layer.kernel, layer.stride, layer.padding)
    if layer.kind is Kind.DEPTHWISE:
        out = np.einsum("...ijc,ijc->...c", patches, kernel)
    else:
        lead = patches.shape[:-3]
        flat = patches.reshape(-1, math.prod(patches.shape[-3:]))
        out = (flat @ kernel.reshape(-1, layer.out_channels)).reshape(*lead, layer.out_channels)
    return out + np.asarray(weights["bias"], dtype=np.float64)


def apply_layer(x, layer: LayerSpec, weights: dict) -> np.ndarray:
    y = conv_forward(x, layer, weights)
    return np.maximum(y, 0.0) if layer.relu and layer.kind is not Kind.MAXPOOL else y


def layer_flops(layer: LayerSpec, input_shape) -> int:
    """Multiply-adds of one application of ``layer``; max pooling counts as zero."""
    ho, wo, cout = output_shape(layer, input_shape)
    kh, kw = layer.kernel
    cin = layer.in_channels
    if layer.kind is Kind.MAXPOOL:
        return 0
    if layer.kind is Kind.DEPTHWISE:
        return ho * wo * cin * kh * kw
    if layer.kind is Kind.POINTWISE:
        return ho * wo * cout * cin
    return ho * wo * cout * kh * kw * cin


def activation_bytes(layer: LayerSpec, input_shape) -> int:
    return math.prod(output_shape(layer, input_shape)) * BYTES_PER_ELEMENT


def truncated_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """Normal samples redrawn until they fall within two standard deviations."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


def init_layer(layer: LayerSpec, rng: np.random.Generator, std: float | None = None) -> dict:
    """Truncated-normal kernel and zero bias.

    ``std=None`` uses fan-in scaling ``sqrt(2 / fan_in)``.
    """
    if not layer.has_weights:
        return {}
    shape = layer.kernel_shape()
    if std is None:
        fan_in = layer.kernel[0] * layer.kernel[1] * (1 if layer.kind is Kind.DEPTHWISE else layer.in_channels)
        std = math.sqrt(2.0 / fan_in) / 0.8796  # undo the variance lost to truncation
    return {"kernel": truncated_normal(rng, shape, std), "bias": np.zeros(layer.out_channels)}
