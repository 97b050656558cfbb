"""Regular anchor grids tiled over feature maps."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class AnchorGrid:
    """Anchors for one feature map, ordered row-major, then scale, then ratio.

    ``boxes`` has shape ``(fm_h * fm_w * len(scales) * len(ratios), 4)``.
    """

    boxes: np.ndarray
    fm_h: int
    fm_w: int
    stride: float
    base: float
    scales: tuple[float, ...]
    ratios: tuple[float, ...]

    @property
    def anchors_per_location(self) -> int:
        return len(self.scales) * len(self.ratios)

    def __len__(self) -> int:
        return len(self.boxes)


def generate_grid(
    fm_h: int,
    fm_w: int,
    stride: float,
    base: float,
    scales: Sequence[float],
    ratios: Sequence[float],
    stride_x: float | None = None,
) -> AnchorGrid:
    """Tile ``len(scales) * len(ratios)`` anchors at every feature-map cell.

    The anchor for (row i, col j, scale s, ratio r) is centered on
    ``((i + 0.5) * stride, (j + 0.5) * stride)`` with width ``base*s*sqrt(r)``
    and height ``base*s/sqrt(r)``, so its area is ``(base*s)**2``.
    """
    if not scales or not ratios:
        raise ValueError("scales and ratios must be non-empty")
    if fm_h <= 0 or fm_w <= 0 or stride <= 0 or base <= 0:
        raise ValueError("grid dimensions, stride and base must be positive")
    if any(s <= 0 for s in scales) or any(r <= 0 for r in ratios):
        raise ValueError("scales and ratios must be positive")
    sx = stride if stride_x is None else stride_x

    s = np.asarray(scales, dtype=np.float64)[:, None]
    r = np.sqrt(np.asarray(ratios, dtype=np.float64))[None, :]
    widths = (base * s * r).ravel()
    heights = (base * s / r).ravel()

    yc = (np.arange(fm_h) + 0.5) * stride
    xc = (np.arange(fm_w) + 0.5) * sx
    yy, xx = np.meshgrid(yc, xc, indexing="ij")
    yy = yy.reshape(-1, 1)
    xx = xx.reshape(-1, 1)
    boxes = np.stack(
        [yy - 0.5 * heights, xx - 0.5 * widths, yy + 0.5 * heights, xx + 0.5 * widths], axis=-1
    ).reshape(-1, 4)
    return AnchorGrid(boxes, fm_h, fm_w, float(stride), float(base), tuple(scales), tuple(ratios))


def ssd_anchor_pyramid(
    resolutions: Sequence[tuple[int, int]],
    base_sizes: Sequence[float],
    ratios: Sequence[float],
    image_size: tuple[int, int] | int,
    scales: Sequence[float] = (1.0,),
) -> list[AnchorGrid]:
    """One grid per prediction layer; concatenation order is layer-major.

    Each layer's stride is the image size divided by its feature-map size, so
    the centers of every layer span the same image extent.

    Raises:
        ValueError: if the resolutions do not strictly decrease.
    """
    if len(resolutions) != len(base_sizes):
        raise ValueError("need one base size per layer")
    if isinstance(image_size, int):
        image_size = (image_size, image_size)
    for (h0, w0), (h1, w1) in zip(resolutions, resolutions[1:]):
        if not (h1 < h0 and w1 < w0) or h1 < (h0 + 1) // 2 - 1 or w1 < (w0 + 1) // 2 - 1:
            raise ValueError(f"resolutions must decay by about 2 per layer: {list(resolutions)}")
    grids = []
    for (fh, fw), base in zip(resolutions, base_sizes):
        grids.append(
            generate_grid(fh, fw, image_size[0] / fh, base, scales, ratios, stride_x=image_size[1] / fw)
        )
    return grids


def concat_grids(grids: Sequence[AnchorGrid]) -> np.ndarray:
    return np.concatenate([g.boxes for g in grids], axis=0)
