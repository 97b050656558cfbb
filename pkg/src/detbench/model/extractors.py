"""Tiny feature extractors: a dense conv stack and a depthwise-separable stack.

Both end at output stride 16 with 32 channels and expose a stride-8 tap
(``lower``) for multi-layer SSD prediction. The stride-8 variant turns the
last stride-2 stage into a stride-1 stage; kernel sizes are unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

from .layers import Kind, LayerSpec

EXTRACTORS = ("dense_tiny", "separable_tiny")
FEATURE_CHANNELS = 32

# (out_channels, stride) per stage after the stem.
_STAGES = ((16, 1), (32, 2), (32, 2), (32, 2))


@dataclass(frozen=True)
class Extractor:
    name: str
    layers: tuple[LayerSpec, ...]
    lower_tap: int  # index of the layer whose output is the stride-8 map
    output_stride: int

    @property
    def channels(self) -> int:
        return self.layers[-1].out_channels


def build_extractor(name: str, output_stride: int = 16) -> Extractor:
    if name not in EXTRACTORS:
        raise ValueError(f"unknown extractor {name!r}; choose from {EXTRACTORS}")
    if output_stride not in (8, 16):
        raise ValueError("output stride must be 8 or 16")
    stages = list(_STAGES)
    if output_stride == 8:
        stages[-1] = (stages[-1][0], 1)

    layers = [LayerSpec("extractor/conv1", Kind.CONV, (3, 3), 3, 16, 2)]
    cin = 16
    lower_tap = 0
    for i, (cout, stride) in enumerate(stages, start=2):
        if name == "dense_tiny":
            layers.append(LayerSpec(f"extractor/conv{i}", Kind.CONV, (3, 3), cin, cout, stride))
        else:
            layers.append(LayerSpec(f"extractor/dw{i}", Kind.DEPTHWISE, (3, 3), cin, cin, stride))
            layers.append(LayerSpec(f"extractor/pw{i}", Kind.POINTWISE, (1, 1), cin, cout, 1))
        if i == len(stages):  # third stride-2 stage, stride 8
            lower_tap = len(layers) - 1
        cin = cout
    return Extractor(name, tuple(layers), lower_tap, output_stride)
