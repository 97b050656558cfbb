"""SSD, Faster R-CNN and R-FCN meta-architectures over the tiny extractors.

Only ``predictor`` layers are trainable. Every predictor is linear in a
frozen input (im2col patches, flattened crop features or bin-pooled
features), so the forward pass is written as ``inputs @ kernel + bias`` and
the training loop reuses exactly the same inputs.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .. import geometry
from ..anchors import AnchorGrid, concat_grids, generate_grid, ssd_anchor_pyramid
from ..geometry import Scheme
from ..losses import softmax
from ..postprocess import DEFAULT_SCORE_THRESHOLD, Detections, finalize, nms_indices, raw_to_detections
from . import crops
from .config import DetectorConfig, MetaArch
from .cost import CostReport, LayerCost, shape_bytes
from .extractors import build_extractor
from .layers import (
    Kind,
    LayerSpec,
    activation_bytes,
    apply_layer,
    im2col,
    init_layer,
    layer_flops,
    output_shape,
)

PREDICTOR_STD = 0.03
# Largest |size code| accepted by the decoder, about a 60x size ratio.
SIZE_CODE_CLIP = geometry.SIZE_SCALE * np.log(1000.0 / 16.0)
MIN_PROPOSAL_SIZE = 1.0


@dataclass
class RawDetections:
    """Pre-postprocessing output: one box and one class distribution per row.

    ``scores`` are softmax probabilities over ``K + 1`` classes, background first.
    """

    boxes: np.ndarray
    scores: np.ndarray
    proposals: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.boxes)


def layer_weights(weights: dict, layer: LayerSpec) -> dict:
    if not layer.has_weights:
        return {}
    return {"kernel": weights[f"{layer.name}/kernel"], "bias": weights[f"{layer.name}/bias"]}


def preprocess(image) -> np.ndarray:
    """Map an ``(M, M, 3)`` image in [0, 1] onto [-1, 1]."""
    return 2.0 * np.asarray(image, dtype=np.float64) - 1.0


def linear(inputs: np.ndarray, weights: dict, layer: LayerSpec) -> np.ndarray:
    w = layer_weights(weights, layer)
    return inputs @ w["kernel"].reshape(-1, layer.out_channels) + w["bias"]


def clip_codes(codes: np.ndarray, scheme: Scheme) -> np.ndarray:
    if scheme is not Scheme.SCALED_RESIDUAL:
        return codes
    out = codes.copy()
    out[..., 2:] = np.clip(out[..., 2:], -SIZE_CODE_CLIP, SIZE_CODE_CLIP)
    return out


class Detector:
    def __init__(self, cfg: DetectorConfig):
        self.cfg = cfg
        self.num_classes = cfg.num_classes
        self.extractor = build_extractor(cfg.extractor, cfg.stride)
        c = self.extractor.channels
        k1 = cfg.num_classes + 1
        ratios = cfg.anchor_ratios
        self.box_layers: tuple[LayerSpec, ...] = ()
        self.hidden: tuple[LayerSpec | None, ...] = ()
        if cfg.meta_arch is MetaArch.SSD:
            self.extras = tuple(
                LayerSpec(f"ssd/extra{i}", Kind.CONV, (3, 3), c, c, 2) for i in range(1, cfg.ssd_extra_layers + 1)
            )
            a = len(cfg.ssd_anchor_scales) * len(ratios)
            n_maps = len(self.extras) + (2 if cfg.stride == 16 else 1)
            stacks = [self._dense_stack(f"ssd/head{i}", c, a * (4 + k1)) for i in range(n_maps)]
            self.hidden = tuple(h for h, _ in stacks)
            self.heads = tuple(p for _, p in stacks)
        else:
            self.extras = ()
            a = len(cfg.rpn_anchor_scales) * len(ratios)
            hidden, head = self._dense_stack("rpn/head", c, a * (4 + 2))
            self.hidden, self.heads = (hidden,), (head,)
            if cfg.meta_arch is MetaArch.FASTER_RCNN:
                half = cfg.crop_size // 2
                self.box_layers = (
                    LayerSpec("box/pool", Kind.MAXPOOL, (2, 2), c, c, 2, "valid"),
                    LayerSpec("box/conv", Kind.CONV, (3, 3), c, c, 1),
                    LayerSpec("box/head", Kind.PREDICTOR, (half, half), c, 4 + k1, 1, "valid", relu=False),
                )
            else:
                kk = cfg.ps_bins**2
                self.box_layers = (LayerSpec("rfcn/score_maps", Kind.PREDICTOR, (1, 1), c, kk * (k1 + 4), relu=False),)

    def _dense_stack(self, name: str, cin: int, cout: int) -> tuple[LayerSpec | None, LayerSpec]:
        depth = self.cfg.head_depth
        if not depth:
            return None, LayerSpec(name, Kind.PREDICTOR, (3, 3), cin, cout, relu=False)
        return (
            LayerSpec(f"{name}/hidden", Kind.PREDICTOR, (3, 3), cin, depth),
            LayerSpec(name, Kind.PREDICTOR, (1, 1), depth, cout, relu=False),
        )

    # ----------------------------------------------------------------- weights

    def dense_layers(self) -> tuple[LayerSpec, ...]:
        return tuple(l for pair in zip(self.hidden, self.heads) for l in pair if l is not None)

    def layers(self) -> tuple[LayerSpec, ...]:
        return self.extractor.layers + self.extras + self.dense_layers() + self.box_layers

    def trainable_layers(self) -> tuple[LayerSpec, ...]:
        return tuple(l for l in self.layers() if l.trainable)

    def init_weights(self, seed: int | None = None) -> dict[str, np.ndarray]:
        """Frozen layers get fan-in scaled init; predictors get sigma = 0.03."""
        rng = np.random.default_rng(self.cfg.weight_seed if seed is None else seed)
        weights = {}
        for layer in self.layers():
            std = PREDICTOR_STD if layer.trainable else None
            for key, value in init_layer(layer, rng, std).items():
                weights[f"{layer.name}/{key}"] = value
        return weights

    # ---------------------------------------------------------------- backbone

    def backbone(self, image, weights) -> tuple[np.ndarray, np.ndarray]:
        """Return the stride-8 (lower) and final (top) feature maps."""
        x = preprocess(image)
        m = self.cfg.resolution
        if x.shape != (m, m, 3):
            raise ValueError(f"image must be resized to {(m, m, 3)}, got {x.shape}")
        lower = None
        for i, layer in enumerate(self.extractor.layers):
            x = apply_layer(x, layer, layer_weights(weights, layer))
            if i == self.extractor.lower_tap:
                lower = x
        return lower, x

    def ssd_maps(self, image, weights) -> list[np.ndarray]:
        lower, top = self.backbone(image, weights)
        maps = [lower, top] if self.cfg.stride == 16 else [top]
        x = top
        for layer in self.extras:
            x = apply_layer(x, layer, layer_weights(weights, layer))
            maps.append(x)
        return maps

    # ----------------------------------------------------------------- anchors

    @functools.lru_cache(maxsize=8)
    def ssd_grids(self, shapes: tuple[tuple[int, int], ...]) -> tuple[AnchorGrid, ...]:
        m = self.cfg.resolution
        bases = [self.cfg.ssd_base_factor * m / h for h, _ in shapes]
        return tuple(ssd_anchor_pyramid(shapes, bases, self.cfg.anchor_ratios, m, self.cfg.ssd_anchor_scales))

    @functools.lru_cache(maxsize=8)
    def rpn_grid(self, shape: tuple[int, int]) -> AnchorGrid:
        m = self.cfg.resolution
        return generate_grid(
            shape[0],
            shape[1],
            m / shape[0],
            self.cfg.rpn_base_factor * self.cfg.stride,
            self.cfg.rpn_anchor_scales,
            self.cfg.anchor_ratios,
            stride_x=m / shape[1],
        )

    def anchors_for(self, maps: list[np.ndarray]) -> np.ndarray:
        if self.cfg.meta_arch is MetaArch.SSD:
            return concat_grids(self.ssd_grids(tuple(mp.shape[:2] for mp in maps)))
        return self.rpn_grid(maps[0].shape[:2]).boxes

    # ------------------------------------------------------------ dense heads

    @staticmethod
    def head_inputs(fmap: np.ndarray, layer: LayerSpec) -> np.ndarray:
        """im2col patches, flattened to ``(H*W, kh*kw*C)``."""
        p = im2col(fmap, layer.kernel, layer.stride, layer.padding)
        return p.reshape(p.shape[0] * p.shape[1], -1)

    def dense_hidden(self, inputs: list[np.ndarray], weights) -> list[np.ndarray]:
        """Inputs of the final dense predictors (the hidden activations when ``head_depth > 0``)."""
        return [x if h is None else np.maximum(linear(x, weights, h), 0.0) for x, h in zip(inputs, self.hidden)]

    def dense_head(self, inputs: list[np.ndarray], weights, hidden=None) -> tuple[np.ndarray, np.ndarray]:
        """Per-anchor ``(box codes (A, 4), logits (A, n_cls))`` from the dense predictors."""
        hidden = self.dense_hidden(inputs, weights) if hidden is None else hidden
        locs, logits = [], []
        for x, layer in zip(hidden, self.heads):
            out = linear(x, weights, layer)
            out = out.reshape(-1, out.shape[1] // self._dense_width(layer))
            locs.append(out[:, :4])
            logits.append(out[:, 4:])
        return np.concatenate(locs), np.concatenate(logits)

    def _dense_width(self, layer: LayerSpec) -> int:
        if self.cfg.meta_arch is MetaArch.SSD:
            return len(self.cfg.ssd_anchor_scales) * len(self.cfg.anchor_ratios)
        return len(self.cfg.rpn_anchor_scales) * len(self.cfg.anchor_ratios)

    def dense_inputs(self, maps: list[np.ndarray]) -> list[np.ndarray]:
        return [self.head_inputs(mp, h or p) for mp, h, p in zip(maps, self.hidden, self.heads)]

    def decode(self, codes, anchors) -> np.ndarray:
        m = self.cfg.resolution
        return geometry.decode_boxes(clip_codes(codes, self.cfg.box_scheme), anchors, self.cfg.box_scheme, (m, m))

    def encode(self, boxes, anchors) -> np.ndarray:
        m = self.cfg.resolution
        return geometry.encode_boxes(boxes, anchors, self.cfg.box_scheme, (m, m))

    # ------------------------------------------------------------- proposals

    def propose(self, rpn_loc, rpn_logits, anchors, num_proposals: int) -> tuple[np.ndarray, np.ndarray]:
        """Top-N objectness proposals after clipping, size filtering and NMS."""
        m = self.cfg.resolution
        objectness = softmax(rpn_logits)[:, 1]
        boxes = geometry.clip_to_window(self.decode(rpn_loc, anchors), [0, 0, m, m])
        h = boxes[:, 2] - boxes[:, 0]
        w = boxes[:, 3] - boxes[:, 1]
        keep = np.flatnonzero((h >= MIN_PROPOSAL_SIZE) & (w >= MIN_PROPOSAL_SIZE))
        kept = nms_indices(boxes[keep], objectness[keep], self.cfg.rpn_nms_threshold, num_proposals)
        idx = keep[kept]
        return boxes[idx], objectness[idx]

    def to_feature_coords(self, boxes_px, fmap_shape) -> np.ndarray:
        """Pixel boxes to the normalized frame where 0 and 1 are the first and last cell centers."""
        m = self.cfg.resolution
        b = np.asarray(boxes_px, dtype=np.float64).reshape(-1, 4)
        fh, fw = fmap_shape[:2]
        sy, sx = m / fh, m / fw
        ny = (b[:, [0, 2]] / sy - 0.5) / max(fh - 1, 1)
        nx = (b[:, [1, 3]] / sx - 0.5) / max(fw - 1, 1)
        return np.clip(np.stack([ny[:, 0], nx[:, 0], ny[:, 1], nx[:, 1]], axis=1), 0.0, 1.0)

    # ------------------------------------------------------------ box stages

    def box_inputs(self, top: np.ndarray, proposals: np.ndarray, weights) -> np.ndarray:
        """Frozen per-proposal inputs of the second-stage predictor.

        Faster R-CNN: flattened ``box/conv`` features of the pooled crops,
        ``(n, F)``. R-FCN: bin-averaged top features, ``(n, k*k, C)``.
        """
        nb = self.to_feature_coords(proposals, top.shape)
        if self.cfg.meta_arch is MetaArch.RFCN:
            return crops.bin_averages(top, nb, self.cfg.ps_bins, self.cfg.ps_samples)
        cs = self.cfg.crop_size
        x = crops.crop_and_resize(top, nb, (cs, cs))
        for layer in self.box_layers[:-1]:
            x = apply_layer(x, layer, layer_weights(weights, layer))
        return x.reshape(len(nb), -1)

    def box_head(self, inputs: np.ndarray, weights) -> tuple[np.ndarray, np.ndarray]:
        """Second-stage ``(box codes (n, 4), logits (n, K + 1))``."""
        k1 = self.num_classes + 1
        layer = self.box_layers[-1]
        if self.cfg.meta_arch is MetaArch.FASTER_RCNN:
            out = linear(inputs, weights, layer)
            return out[:, :4], out[:, 4:]
        kk = self.cfg.ps_bins**2
        w = layer_weights(weights, layer)
        kernel = w["kernel"].reshape(-1, kk * (k1 + 4))
        wc = kernel[:, : kk * k1].reshape(-1, kk, k1)
        wl = kernel[:, kk * k1 :].reshape(-1, kk, 4)
        bc = w["bias"][: kk * k1].reshape(kk, k1)
        bl = w["bias"][kk * k1 :].reshape(kk, 4)
        logits = np.einsum("ngf,fgc->nc", inputs, wc) / kk + bc.mean(axis=0)
        loc = np.einsum("ngf,fgc->nc", inputs, wl) / kk + bl.mean(axis=0)
        return loc, logits

    def rfcn_score_maps(self, top: np.ndarray, weights) -> np.ndarray:
        layer = self.box_layers[-1]
        return apply_layer(top, layer, layer_weights(weights, layer))

    # ---------------------------------------------------------------- forward

    def forward(self, image, weights) -> tuple[RawDetections, CostReport]:
        cfg = self.cfg
        if cfg.meta_arch is MetaArch.SSD:
            maps = self.ssd_maps(image, weights)
            loc, logits = self.dense_head(self.dense_inputs(maps), weights)
            boxes = self.decode(loc, self.anchors_for(maps))
            return RawDetections(boxes, softmax(logits)), self.cost()

        _, top = self.backbone(image, weights)
        rpn_loc, rpn_logits = self.dense_head(self.dense_inputs([top]), weights)
        proposals, _ = self.propose(rpn_loc, rpn_logits, self.anchors_for([top]), cfg.num_proposals)
        if cfg.meta_arch is MetaArch.RFCN:
            maps = self.rfcn_score_maps(top, weights)
            kk = cfg.ps_bins**2
            k1 = self.num_classes + 1
            nb = self.to_feature_coords(proposals, top.shape)
            logits = crops.position_sensitive_pool(maps[..., : kk * k1], nb, cfg.ps_bins, cfg.ps_samples)
            loc = crops.position_sensitive_pool(maps[..., kk * k1 :], nb, cfg.ps_bins, cfg.ps_samples)
        else:
            loc, logits = self.box_head(self.box_inputs(top, proposals, weights), weights)
        boxes = self.decode(loc, proposals) if len(proposals) else np.zeros((0, 4))
        scores = softmax(logits) if len(proposals) else np.zeros((0, self.num_classes + 1))
        return RawDetections(boxes, scores, proposals), self.cost(len(proposals))

    def detect(self, image, weights, score_threshold: float = DEFAULT_SCORE_THRESHOLD, **kwargs) -> Detections:
        """Forward pass plus postprocessing (score filter, clipping, per-class NMS, top-k)."""
        raw, _ = self.forward(image, weights)
        m = self.cfg.resolution
        dets = raw_to_detections(raw.boxes, raw.scores, score_threshold)
        return finalize(dets, score_threshold, [0, 0, m, m], **kwargs)

    # ------------------------------------------------------------------ cost

    def cost(self, num_proposals: int | None = None) -> CostReport:
        """Analytic cost; per-proposal stages are priced for ``num_proposals`` boxes."""
        cfg = self.cfg
        m = cfg.resolution
        rows = []

        def run(layer, shape, per_proposal=False):
            rows.append(
                LayerCost(layer.name, layer_flops(layer, shape), activation_bytes(layer, shape), layer.param_count(), per_proposal)
            )
            return output_shape(layer, shape)

        shape = (m, m, 3)
        lower = None
        for i, layer in enumerate(self.extractor.layers):
            shape = run(layer, shape)
            if i == self.extractor.lower_tap:
                lower = shape
        top = shape

        if cfg.meta_arch is MetaArch.SSD:
            maps = [lower, top] if cfg.stride == 16 else [top]
            for layer in self.extras:
                shape = run(layer, shape)
                maps.append(shape)
            for mp, h, layer in zip(maps, self.hidden, self.heads):
                run(layer, run(h, mp) if h else mp)
            return CostReport(tuple(rows), 0, shape_bytes((m, m, 3)))

        h = self.hidden[0]
        run(self.heads[0], run(h, top) if h else top)
        n = cfg.num_proposals if num_proposals is None else num_proposals
        k1 = self.num_classes + 1
        c = top[2]
        if cfg.meta_arch is MetaArch.FASTER_RCNN:
            cs = cfg.crop_size
            rows.append(LayerCost("box/crop", crops.crop_flops((cs, cs), c), shape_bytes((cs, cs, c)), 0, True))
            shape = (cs, cs, c)
            for layer in self.box_layers:
                shape = run(layer, shape, per_proposal=True)
        else:
            score_layer = self.box_layers[-1]
            run(score_layer, top)
            k, s = cfg.ps_bins, cfg.ps_samples
            rows.append(
                LayerCost("rfcn/ps_pool", crops.ps_pool_flops(k, s, k1 + 4), shape_bytes((k * k, k1 + 4)), 0, True)
            )
        return CostReport(tuple(rows), n, shape_bytes((m, m, 3)))


def run_detector(cfg: DetectorConfig, image, weights) -> tuple[RawDetections, CostReport]:
    return Detector(cfg).forward(image, weights)
