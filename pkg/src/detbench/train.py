"""Head-only training with SGD + momentum.

Extractor, extra and second-stage body layers stay frozen at their
initialization, so every trainable predictor is a linear map of a frozen
input. Those inputs are cached per scene, and layer gradients follow from
the loss gradients with one matrix product each.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import flip_scene
from .losses import LossConfig, loss_and_gradient
from .matching import (
    BOX_CLASSIFIER_MATCHER,
    RPN_MATCHER,
    SSD_MATCHER,
    MatcherConfig,
    MatchResult,
    match,
    sample_minibatch,
)
from .model.config import DetectorConfig, MetaArch
from .model.detector import Detector


class TrainingDiverged(RuntimeError):
    """Raised when the loss exceeds the divergence guard."""

    def __init__(self, message: str, trace: list[float]):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0
    images_per_step: int = 4
    ssd_batch: int = 128
    ssd_positive_fraction: float = 0.25
    rpn_batch: int = 256
    rpn_positive_fraction: float = 0.5
    box_batch: int = 64
    box_positive_fraction: float = 0.25
    horizontal_flip: bool = False
    vertical_flip: bool = False
    seed: int = 0
    divergence_factor: float = 10.0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be positive")
        if self.learning_rate < 0 or not math.isfinite(self.learning_rate):
            raise ValueError("learning_rate must be finite and nonnegative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.images_per_step < 1:
            raise ValueError("images_per_step must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls().to_dict())
        if unknown:
            raise ValueError(f"unknown train keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainResult:
    weights: dict[str, np.ndarray]
    trace: list[float] = field(default_factory=list)


def stage_matcher(cfg: DetectorConfig, preset: MatcherConfig) -> MatcherConfig:
    """Stage thresholds with the configured matching strategy."""
    return MatcherConfig(cfg.matcher, preset.matched_threshold, preset.unmatched_threshold, preset.force_match_groundtruth)


def _targets(det: Detector, m: MatchResult, gt_boxes: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    targets = np.full((len(m), 4), np.nan)
    pos = np.flatnonzero(m.positive)
    if len(pos):
        targets[pos] = det.encode(gt_boxes[m.matched_gt[pos]], anchors[pos])
    return targets


@dataclass
class _Sample:
    """Frozen per-scene quantities."""

    dense_inputs: list[np.ndarray]
    match: MatchResult
    targets: np.ndarray
    anchors: np.ndarray
    top: np.ndarray | None
    gt_boxes: np.ndarray
    gt_classes: np.ndarray


class HeadTrainer:
    """Computes losses and predictor gradients for one detector configuration."""

    def __init__(self, cfg: DetectorConfig, tcfg: TrainConfig, frozen_weights: dict):
        self.cfg = cfg
        self.tcfg = tcfg
        self.det = Detector(cfg)
        self.frozen = frozen_weights
        self.two_stage = cfg.meta_arch is not MetaArch.SSD
        self.loss_cfg = cfg.loss
        self.rpn_loss_cfg = LossConfig(cfg.alpha, cfg.beta, cfg.location_loss, 1)
        self._cache: dict[int, _Sample] = {}

    def sample(self, key: int, scene) -> _Sample:
        if key in self._cache:
            return self._cache[key]
        det, w = self.det, self.frozen
        gt_boxes, gt_classes = scene.boxes, scene.classes
        if self.two_stage:
            _, top = det.backbone(scene.image, w)
            maps = [top]
            labels = np.ones_like(gt_classes)
            preset = RPN_MATCHER
        else:
            top = None
            maps = det.ssd_maps(scene.image, w)
            labels = gt_classes
            preset = SSD_MATCHER
        anchors = det.anchors_for(maps)
        m = match(anchors, gt_boxes, labels, stage_matcher(self.cfg, preset))
        s = _Sample(det.dense_inputs(maps), m, _targets(det, m, gt_boxes, anchors), anchors, top, gt_boxes, gt_classes)
        self._cache[key] = s
        return s

    def _dense_grads(self, s: _Sample, hidden, weights, g_loc, g_cls, grads):
        off = 0
        for x, h, hl, layer in zip(s.dense_inputs, hidden, self.det.hidden, self.det.heads):
            a = layer.out_channels // (4 + g_cls.shape[1])
            n = x.shape[0] * a
            g_out = np.concatenate([g_loc[off : off + n], g_cls[off : off + n]], axis=1).reshape(x.shape[0], -1)
            _add(grads, layer, h.T @ g_out, g_out.sum(axis=0))
            if hl is not None:
                g_h = (g_out @ weights[f"{layer.name}/kernel"].reshape(-1, layer.out_channels).T) * (h > 0)
                _add(grads, hl, x.T @ g_h, g_h.sum(axis=0))
            off += n

    def _box_grads(self, inputs, g_loc, g_cls, grads):
        layer = self.det.box_layers[-1]
        if self.cfg.meta_arch is MetaArch.FASTER_RCNN:
            g_out = np.concatenate([g_loc, g_cls], axis=1)
            _add(grads, layer, inputs.T @ g_out, g_out.sum(axis=0))
            return
        kk = self.cfg.ps_bins**2
        d_wc = np.einsum("ngf,nc->fgc", inputs, g_cls) / kk
        d_wl = np.einsum("ngf,nc->fgc", inputs, g_loc) / kk
        f = inputs.shape[2]
        kernel = np.concatenate([d_wc.reshape(f, -1), d_wl.reshape(f, -1)], axis=1)
        bias = np.concatenate([np.tile(g_cls.sum(axis=0) / kk, kk), np.tile(g_loc.sum(axis=0) / kk, kk)])
        _add(grads, layer, kernel, bias)

    def loss_and_grads(self, weights, key: int, scene, rng, need_grad: bool = True):
        """Loss of one scene under freshly sampled minibatches, plus predictor gradients."""
        det, tcfg = self.det, self.tcfg
        s = self.sample(key, scene)
        grads: dict[str, np.ndarray] = {}
        hidden = det.dense_hidden(s.dense_inputs, weights)
        loc, logits = det.dense_head(s.dense_inputs, weights, hidden)
        if self.two_stage:
            batch, frac, lcfg = tcfg.rpn_batch, tcfg.rpn_positive_fraction, self.rpn_loss_cfg
        else:
            batch, frac, lcfg = tcfg.ssd_batch, tcfg.ssd_positive_fraction, self.loss_cfg
        idx = sample_minibatch(s.match, batch, frac, rng)
        total = 0.0
        if len(idx):
            loss, g_loc, g_cls = loss_and_gradient(s.match, loc, logits, s.targets, idx, lcfg, need_grad)
            total += loss
            if need_grad:
                self._dense_grads(s, hidden, weights, g_loc, g_cls, grads)
        if not self.two_stage:
            return total, grads

        proposals, _ = det.propose(loc, logits, s.anchors, self.cfg.num_proposals)
        boxes = np.concatenate([proposals, s.gt_boxes]) if len(s.gt_boxes) else proposals
        bm = match(boxes, s.gt_boxes, s.gt_classes, stage_matcher(self.cfg, BOX_CLASSIFIER_MATCHER))
        idx = sample_minibatch(bm, tcfg.box_batch, tcfg.box_positive_fraction, rng)
        if len(idx) == 0:
            return total, grads
        sub = MatchResult(bm.matched_gt[idx], bm.labels[idx])
        inputs = det.box_inputs(s.top, boxes[idx], self.frozen)
        b_loc, b_logits = det.box_head(inputs, weights)
        targets = _targets(det, sub, s.gt_boxes, boxes[idx])
        loss, g_loc, g_cls = loss_and_gradient(sub, b_loc, b_logits, targets, np.arange(len(idx)), self.loss_cfg, need_grad)
        total += loss
        if need_grad:
            self._box_grads(inputs, g_loc, g_cls, grads)
        return total, grads


def _add(grads: dict, layer, kernel_grad, bias_grad):
    key_k, key_b = f"{layer.name}/kernel", f"{layer.name}/bias"
    kshape = layer.kernel_shape()
    grads[key_k] = grads.get(key_k, 0.0) + kernel_grad.reshape(kshape)
    grads[key_b] = grads.get(key_b, 0.0) + bias_grad


def train_head(
    cfg: DetectorConfig,
    tcfg: TrainConfig,
    dataset,
    weights: dict | None = None,
    trace_path=None,
) -> TrainResult:
    """Train the predictor layers of ``cfg`` on ``dataset`` (a list of scenes).

    Each step draws ``images_per_step`` scenes (each mirrored with
    probability 1/2 per enabled flip axis), samples anchor minibatches,
    averages the per-scene losses and applies one momentum update
    ``v <- mu * v + g; theta <- theta - lr * v``.

    Raises:
        ValueError: on an empty dataset.
        TrainingDiverged: when a step's loss exceeds ``divergence_factor``
            times the first step's loss.
    """
    scenes = list(dataset)
    if not scenes:
        raise ValueError("dataset is empty")
    det = Detector(cfg)
    weights = det.init_weights() if weights is None else {k: v.copy() for k, v in weights.items()}
    trainer = HeadTrainer(cfg, tcfg, weights)
    trainable = [f"{l.name}/{p}" for l in det.trainable_layers() for p in ("kernel", "bias")]
    velocity = {k: np.zeros_like(weights[k]) for k in trainable}
    rng = np.random.default_rng(tcfg.seed)
    trace: list[float] = []
    b = min(tcfg.images_per_step, len(scenes))
    for step in range(tcfg.steps):
        chosen = rng.choice(len(scenes), size=b, replace=False) if b < len(scenes) else np.arange(len(scenes))
        loss = 0.0
        grads = {k: np.zeros_like(weights[k]) for k in trainable}
        for i in chosen:
            key, scene = int(i), scenes[int(i)]
            if tcfg.horizontal_flip and rng.random() < 0.5:
                key, scene = key + len(scenes), flip_scene(scene)
            if tcfg.vertical_flip and rng.random() < 0.5:
                key, scene = key + 2 * len(scenes), flip_scene(scene, vertical=True)
            li, gi = trainer.loss_and_grads(weights, key, scene, rng)
            loss += li / b
            for k, g in gi.items():
                grads[k] += g / b
        trace.append(loss)
        if not math.isfinite(loss) or (step > 0 and loss > tcfg.divergence_factor * trace[0]):
            raise TrainingDiverged(f"loss {loss:.4g} at step {step} exceeds the divergence guard", trace)
        for k in trainable:
            g = grads[k] + tcfg.weight_decay * weights[k] if tcfg.weight_decay else grads[k]
            velocity[k] = tcfg.momentum * velocity[k] + g
            weights[k] = weights[k] - tcfg.learning_rate * velocity[k]
    if trace_path is not None:
        write_trace(trace, trace_path)
    return TrainResult(weights, trace)


def write_trace(trace, path) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss"])
        for i, v in enumerate(trace):
            w.writerow([i, repr(float(v))])
