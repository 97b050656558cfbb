"""Score thresholding, window clipping, greedy per-class NMS and top-k selection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Box, as_boxes, clip_to_window, pairwise_iou

DEFAULT_IOU_THRESHOLD = 0.6
DEFAULT_MAX_DETECTIONS = 100
DEFAULT_SCORE_THRESHOLD = 0.01

# Settings used when drawing detections for visual inspection.
VIS_SCORE_THRESHOLDS = {"ssd": 0.3, "faster_rcnn": 0.5, "rfcn": 0.5}
VIS_MAX_DETECTIONS = 20


@dataclass(frozen=True)
class ScoredDetection:
    box: Box
    class_id: int
    score: float

    def __post_init__(self):
        if not (np.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass
class Detections:
    """Struct-of-arrays detection list: ``boxes (n, 4)``, ``classes (n,)``, ``scores (n,)``."""

    boxes: np.ndarray
    classes: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        self.boxes = as_boxes(self.boxes).reshape(-1, 4)
        self.classes = np.asarray(self.classes, dtype=np.int64).reshape(-1)
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if not len(self.boxes) == len(self.classes) == len(self.scores):
            raise ValueError("boxes, classes and scores must have equal length")

    def __len__(self) -> int:
        return len(self.scores)

    def __getitem__(self, idx) -> "Detections":
        idx = np.asarray(idx)
        return Detections(self.boxes[idx], self.classes[idx], self.scores[idx])

    @classmethod
    def empty(cls) -> "Detections":
        return cls(np.zeros((0, 4)), np.zeros(0, dtype=np.int64), np.zeros(0))

    @classmethod
    def from_list(cls, dets: list[ScoredDetection]) -> "Detections":
        if not dets:
            return cls.empty()
        return cls(
            np.stack([d.box.to_array() for d in dets]),
            [d.class_id for d in dets],
            [d.score for d in dets],
        )

    def to_list(self) -> list[ScoredDetection]:
        return [
            ScoredDetection(Box(*b.tolist()), int(c), float(s))
            for b, c, s in zip(self.boxes, self.classes, self.scores)
        ]


def score_order(scores) -> np.ndarray:
    """Indices by descending score; equal scores keep their input order."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def nms_indices(boxes, scores, iou_threshold: float, max_output: int | None = None) -> np.ndarray:
    """Greedy NMS; returns kept indices in descending score order.

    A box is kept iff its IOU with every previously kept box is at most
    ``iou_threshold``.
    """
    boxes = as_boxes(boxes).reshape(-1, 4)
    order = score_order(scores)
    if len(order) == 0:
        return order.astype(np.int64)
    ious = pairwise_iou(boxes, boxes)
    suppressed = np.zeros(len(order), dtype=bool)
    kept = []
    for i in order:
        if suppressed[i]:
            continue
        kept.append(i)
        if max_output is not None and len(kept) >= max_output:
            break
        suppressed |= ious[i] > iou_threshold
    return np.asarray(kept, dtype=np.int64)


def nms(dets: list[ScoredDetection], iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> list[ScoredDetection]:
    """Greedy NMS over one class's detections."""
    if not dets:
        return []
    d = Detections.from_list(dets)
    return [dets[i] for i in nms_indices(d.boxes, d.scores, iou_threshold)]


def raw_to_detections(boxes, class_scores, score_threshold: float = DEFAULT_SCORE_THRESHOLD) -> Detections:
    """Flatten per-row class distributions (background in column 0) into detections."""
    boxes = as_boxes(boxes).reshape(-1, 4)
    s = np.asarray(class_scores, dtype=np.float64)[:, 1:]
    rows, cols = np.nonzero(s >= score_threshold)
    return Detections(boxes[rows], cols + 1, s[rows, cols])


def finalize(
    dets: Detections,
    score_threshold: float = DEFAULT_SCORE_THRESHOLD,
    window=None,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
    max_detections: int = DEFAULT_MAX_DETECTIONS,
) -> Detections:
    """Score filter, clip to ``window``, per-class NMS, keep the top ``max_detections``."""
    keep = np.flatnonzero(dets.scores >= score_threshold)
    d = dets[keep]
    if window is not None:
        d = Detections(clip_to_window(d.boxes, window), d.classes, d.scores)
    survivors = []
    for c in np.unique(d.classes):
        idx = np.flatnonzero(d.classes == c)
        survivors.append(idx[nms_indices(d.boxes[idx], d.scores[idx], iou_threshold)])
    if not survivors:
        return Detections.empty()
    idx = np.sort(np.concatenate(survivors))
    idx = idx[score_order(d.scores[idx])][:max_detections]
    return d[idx]
