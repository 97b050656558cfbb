"""Box geometry: IOU, clipping and the three box encodings.

Boxes are stored as ``[ymin, xmin, ymax, xmax]`` in image pixels (y down).
Arrays of boxes have shape ``(..., 4)``. Areas use the continuous convention
``(ymax - ymin) * (xmax - xmin)`` with no +1 pixel offset.

Encodings are ordered x-first, ``[x, y, w, h]``-style, for every scheme:

* ``corner``          ``[x0, y0, x1, y1]`` normalized by the image size
* ``center_sqrt``     ``[xc, yc, sqrt(w), sqrt(h)]`` normalized by the image size
* ``scaled_residual`` ``[10 dx / wa, 10 dy / ha, 5 log(w / wa), 5 log(h / ha)]``
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

CENTER_SCALE = 10.0
SIZE_SCALE = 5.0


class Scheme(str, enum.Enum):
    CORNER = "corner"
    CENTER_SQRT = "center_sqrt"
    SCALED_RESIDUAL = "scaled_residual"


@dataclass(frozen=True)
class Box:
    ymin: float
    xmin: float
    ymax: float
    xmax: float

    def __post_init__(self):
        vals = (self.ymin, self.xmin, self.ymax, self.xmax)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box {vals}")
        if self.ymax < self.ymin or self.xmax < self.xmin:
            raise ValueError(f"inverted box {vals}")

    @classmethod
    def from_center(cls, yc: float, xc: float, h: float, w: float) -> "Box":
        return cls(yc - h / 2, xc - w / 2, yc + h / 2, xc + w / 2)

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.ymin + self.ymax), 0.5 * (self.xmin + self.xmax))

    @property
    def area(self) -> float:
        return self.height * self.width

    def to_array(self) -> np.ndarray:
        return np.array([self.ymin, self.xmin, self.ymax, self.xmax], dtype=np.float64)


def as_boxes(boxes) -> np.ndarray:
    """Coerce a Box, a sequence of Boxes or an array into a float64 ``(..., 4)`` array."""
    if isinstance(boxes, Box):
        return boxes.to_array()
    if isinstance(boxes, Sequence) and boxes and isinstance(boxes[0], Box):
        return np.stack([b.to_array() for b in boxes])
    arr = np.asarray(boxes, dtype=np.float64)
    if arr.size == 0:
        return arr.reshape(0, 4)
    if arr.shape[-1] != 4:
        raise ValueError(f"boxes must have a trailing dimension of 4, got {arr.shape}")
    return arr


def area(boxes) -> np.ndarray:
    b = as_boxes(boxes)
    return (b[..., 2] - b[..., 0]) * (b[..., 3] - b[..., 1])


def centers_sizes(boxes) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(yc, xc, h, w)`` for each box."""
    b = as_boxes(boxes)
    h = b[..., 2] - b[..., 0]
    w = b[..., 3] - b[..., 1]
    return b[..., 0] + 0.5 * h, b[..., 1] + 0.5 * w, h, w


def iou(a, b) -> float:
    """Jaccard overlap of two boxes; 0 when the union is empty."""
    return float(pairwise_iou(np.atleast_2d(as_boxes(a)), np.atleast_2d(as_boxes(b)))[0, 0])


def pairwise_iou(boxes1, boxes2) -> np.ndarray:
    """IOU matrix of shape ``(N, M)`` between two box sets."""
    b1 = as_boxes(boxes1).reshape(-1, 4)
    b2 = as_boxes(boxes2).reshape(-1, 4)
    ymin = np.maximum(b1[:, None, 0], b2[None, :, 0])
    xmin = np.maximum(b1[:, None, 1], b2[None, :, 1])
    ymax = np.minimum(b1[:, None, 2], b2[None, :, 2])
    xmax = np.minimum(b1[:, None, 3], b2[None, :, 3])
    inter = np.clip(ymax - ymin, 0, None) * np.clip(xmax - xmin, 0, None)
    union = area(b1)[:, None] + area(b2)[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def clip_to_window(boxes, window) -> np.ndarray:
    """Clamp each coordinate into ``window``. Boxes fully outside collapse onto its edge."""
    b = as_boxes(boxes)
    w = as_boxes(window)
    lo = np.array([w[0], w[1], w[0], w[1]])
    hi = np.array([w[2], w[3], w[2], w[3]])
    return np.clip(b, lo, hi)


def _check_scheme(scheme) -> Scheme:
    return Scheme(scheme.value if isinstance(scheme, Scheme) else scheme)


def encode_boxes(boxes, anchors, scheme=Scheme.SCALED_RESIDUAL, image_size=(1.0, 1.0)) -> np.ndarray:
    """Encode ``boxes`` relative to ``anchors`` (broadcastable) under ``scheme``.

    ``image_size`` is ``(height, width)`` and is only used by the two
    normalized schemes; ``anchors`` is only used by ``scaled_residual``.

    Raises:
        ValueError: if a box has nonpositive size under a log/sqrt scheme,
            or an anchor has nonpositive size.
    """
    scheme = _check_scheme(scheme)
    b = as_boxes(boxes)
    img_h, img_w = float(image_size[0]), float(image_size[1])
    if scheme is Scheme.CORNER:
        return np.stack([b[..., 1] / img_w, b[..., 0] / img_h, b[..., 3] / img_w, b[..., 2] / img_h], axis=-1)

    yc, xc, h, w = centers_sizes(b)
    if scheme is Scheme.CENTER_SQRT:
        if np.any(h < 0) or np.any(w < 0):
            raise ValueError("negative box size cannot be sqrt-encoded")
        return np.stack([xc / img_w, yc / img_h, np.sqrt(w / img_w), np.sqrt(h / img_h)], axis=-1)

    ayc, axc, ah, aw = centers_sizes(anchors)
    if np.any(ah <= 0) or np.any(aw <= 0):
        raise ValueError("anchors must have positive size")
    if np.any(h <= 0) or np.any(w <= 0):
        raise ValueError("boxes must have positive size for log encoding")
    return np.stack(
        [
            CENTER_SCALE * (xc - axc) / aw,
            CENTER_SCALE * (yc - ayc) / ah,
            SIZE_SCALE * np.log(w / aw),
            SIZE_SCALE * np.log(h / ah),
        ],
        axis=-1,
    )


def decode_boxes(codes, anchors, scheme=Scheme.SCALED_RESIDUAL, image_size=(1.0, 1.0)) -> np.ndarray:
    """Exact inverse of :func:`encode_boxes`."""
    scheme = _check_scheme(scheme)
    e = np.asarray(codes, dtype=np.float64)
    img_h, img_w = float(image_size[0]), float(image_size[1])
    if scheme is Scheme.CORNER:
        return np.stack([e[..., 1] * img_h, e[..., 0] * img_w, e[..., 3] * img_h, e[..., 2] * img_w], axis=-1)

    if scheme is Scheme.CENTER_SQRT:
        xc, yc = e[..., 0] * img_w, e[..., 1] * img_h
        w, h = e[..., 2] ** 2 * img_w, e[..., 3] ** 2 * img_h
    else:
        ayc, axc, ah, aw = centers_sizes(anchors)
        xc = e[..., 0] * aw / CENTER_SCALE + axc
        yc = e[..., 1] * ah / CENTER_SCALE + ayc
        w = np.exp(e[..., 2] / SIZE_SCALE) * aw
        h = np.exp(e[..., 3] / SIZE_SCALE) * ah
    return np.stack([yc - 0.5 * h, xc - 0.5 * w, yc + 0.5 * h, xc + 0.5 * w], axis=-1)


def encode_box(b: Box, a: Box, scheme=Scheme.SCALED_RESIDUAL, image_size=(1.0, 1.0)) -> np.ndarray:
    return encode_boxes(as_boxes(b), as_boxes(a), scheme, image_size)


def decode_box(e, a: Box, scheme=Scheme.SCALED_RESIDUAL, image_size=(1.0, 1.0)) -> Box:
    return Box(*decode_boxes(e, as_boxes(a), scheme, image_size).tolist())
