"""Bilinear region cropping and position-sensitive pooling.

Boxes are normalized ``[ymin, xmin, ymax, xmax]`` in ``[0, 1]``, where 0 and 1
map onto the first and last feature-map centers. Sampling is corner-aligned:
``out`` samples span the box edge to edge, and a single sample sits at the
box midpoint.
"""

from __future__ import annotations

import numpy as np


def _sample_coords(lo, hi, n: int, size: int) -> np.ndarray:
    """(N, n) continuous sample positions in feature-map index units."""
    lo = np.asarray(lo, dtype=np.float64)[:, None]
    hi = np.asarray(hi, dtype=np.float64)[:, None]
    if n == 1:
        pos = 0.5 * (lo + hi)
    else:
        pos = lo + (hi - lo) * (np.arange(n) / (n - 1))[None, :]
    return np.clip(pos * (size - 1), 0.0, size - 1)


def _interp_terms(pos: np.ndarray, size: int):
    p0 = np.floor(pos).astype(np.int64)
    p1 = np.minimum(p0 + 1, size - 1)
    return p0, p1, pos - p0


def crop_and_resize(feature_map, boxes, out_size) -> np.ndarray:
    """Resample each box of ``feature_map`` onto an ``out_size`` grid.

    Args:
        feature_map: ``(H, W, C)`` array.
        boxes: ``(4,)`` or ``(N, 4)`` normalized boxes.
        out_size: ``(out_h, out_w)``.

    Returns:
        ``(out_h, out_w, C)`` for a single box, else ``(N, out_h, out_w, C)``.
    """
    fm = np.asarray(feature_map, dtype=np.float64)
    b = np.asarray(boxes, dtype=np.float64)
    single = b.ndim == 1
    b = b.reshape(-1, 4)
    oh, ow = out_size
    if oh < 1 or ow < 1:
        raise ValueError("output size must be at least 1x1")
    h, w = fm.shape[:2]
    ys = _sample_coords(b[:, 0], b[:, 2], oh, h)
    xs = _sample_coords(b[:, 1], b[:, 3], ow, w)
    y0, y1, ly = _interp_terms(ys, h)
    x0, x1, lx = _interp_terms(xs, w)
    ly = ly[:, :, None, None]
    lx = lx[:, None, :, None]
    top = fm[y0[:, :, None], x0[:, None, :]] * (1 - lx) + fm[y0[:, :, None], x1[:, None, :]] * lx
    bot = fm[y1[:, :, None], x0[:, None, :]] * (1 - lx) + fm[y1[:, :, None], x1[:, None, :]] * lx
    out = top * (1 - ly) + bot * ly
    return out[0] if single else out


def bin_boxes(boxes, k: int) -> np.ndarray:
    """Split each box into a ``k x k`` grid of sub-boxes; returns ``(N, k*k, 4)``, row-major."""
    b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    hs = (b[:, 2] - b[:, 0]) / k
    ws = (b[:, 3] - b[:, 1]) / k
    i, j = np.divmod(np.arange(k * k), k)
    ymin = b[:, None, 0] + i[None, :] * hs[:, None]
    xmin = b[:, None, 1] + j[None, :] * ws[:, None]
    return np.stack([ymin, xmin, ymin + hs[:, None], xmin + ws[:, None]], axis=-1)


def bin_averages(feature_map, boxes, k: int, samples: int = 2) -> np.ndarray:
    """Mean of ``samples x samples`` bilinear samples in every bin, for all channels.

    Returns ``(N, k*k, C)``.
    """
    bins = bin_boxes(boxes, k)
    n = bins.shape[0]
    crops = crop_and_resize(feature_map, bins.reshape(-1, 4), (samples, samples))
    return crops.mean(axis=(1, 2)).reshape(n, k * k, -1)


def position_sensitive_pool(score_maps, boxes, k: int, samples: int = 2) -> np.ndarray:
    """Position-sensitive pooling: bin ``(i, j)`` reads only channel group ``i*k + j``.

    ``score_maps`` has ``k*k*C`` channels laid out group-major. Each bin is
    average-pooled from its own group and the ``k*k`` bin votes are averaged.

    Returns:
        ``(C,)`` for a single box, else ``(N, C)``.

    Raises:
        ValueError: if the channel count is not divisible by ``k*k``.
    """
    maps = np.asarray(score_maps, dtype=np.float64)
    if k < 1 or maps.shape[2] % (k * k):
        raise ValueError(f"{maps.shape[2]} channels not divisible by k*k = {k * k}")
    single = np.asarray(boxes).ndim == 1
    c = maps.shape[2] // (k * k)
    per_bin = bin_averages(maps, boxes, k, samples)  # (N, k*k, k*k*C)
    groups = per_bin.reshape(per_bin.shape[0], k * k, k * k, c)
    idx = np.arange(k * k)
    out = groups[:, idx, idx, :].mean(axis=1)
    return out[0] if single else out


def crop_flops(out_size, channels: int) -> int:
    """Bilinear resampling cost: four multiply-adds per output element."""
    return 4 * out_size[0] * out_size[1] * channels


def ps_pool_flops(k: int, samples: int, channels_per_group: int) -> int:
    return 4 * k * k * samples * samples * channels_per_group
