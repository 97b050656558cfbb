"""Anchor-to-groundtruth matching and positive/negative minibatch sampling.

A match is stored per anchor in ``matched_gt``: a groundtruth index for
positives, ``NEGATIVE`` (-1) or ``IGNORED`` (-2). Ties are always broken
toward the lowest index.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .geometry import as_boxes, centers_sizes, pairwise_iou

NEGATIVE = -1
IGNORED = -2


class Strategy(str, enum.Enum):
    ARGMAX = "argmax"
    BIPARTITE = "bipartite"
    BOX_CENTER = "box_center"


@dataclass(frozen=True)
class MatcherConfig:
    strategy: Strategy = Strategy.ARGMAX
    matched_threshold: float = 0.5
    unmatched_threshold: float = 0.5
    force_match_groundtruth: bool = True

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        if not 0.0 <= self.unmatched_threshold <= self.matched_threshold <= 1.0:
            raise ValueError("need 0 <= unmatched_threshold <= matched_threshold <= 1")


# Stage defaults for the three places matching is used.
RPN_MATCHER = MatcherConfig(Strategy.ARGMAX, 0.7, 0.3, True)
SSD_MATCHER = MatcherConfig(Strategy.ARGMAX, 0.5, 0.5, True)
BOX_CLASSIFIER_MATCHER = MatcherConfig(Strategy.ARGMAX, 0.5, 0.5, False)


@dataclass(frozen=True)
class MatchResult:
    matched_gt: np.ndarray  # (A,) int
    labels: np.ndarray  # (A,) int, y_a in {0..K}; 0 for negative and ignored anchors

    @property
    def positive(self) -> np.ndarray:
        return self.matched_gt >= 0

    @property
    def negative(self) -> np.ndarray:
        return self.matched_gt == NEGATIVE

    @property
    def ignored(self) -> np.ndarray:
        return self.matched_gt == IGNORED

    def __len__(self) -> int:
        return len(self.matched_gt)


def _result(matched: np.ndarray, gt_classes: np.ndarray) -> MatchResult:
    labels = np.zeros(len(matched), dtype=np.int64)
    pos = matched >= 0
    labels[pos] = gt_classes[matched[pos]]
    return MatchResult(matched.astype(np.int64), labels)


def _prepare(anchors, gt_boxes, gt_classes):
    anchors = as_boxes(anchors).reshape(-1, 4)
    gt_boxes = as_boxes(gt_boxes).reshape(-1, 4)
    gt_classes = np.asarray(gt_classes, dtype=np.int64).reshape(-1)
    if len(gt_classes) != len(gt_boxes):
        raise ValueError("gt_boxes and gt_classes length mismatch")
    return anchors, gt_boxes, gt_classes


def match_argmax(anchors, gt_boxes, gt_classes, cfg: MatcherConfig = SSD_MATCHER) -> MatchResult:
    anchors, gt_boxes, gt_classes = _prepare(anchors, gt_boxes, gt_classes)
    n = len(anchors)
    if len(gt_boxes) == 0:
        return _result(np.full(n, NEGATIVE), gt_classes)
    ious = pairwise_iou(anchors, gt_boxes)
    best_gt = np.argmax(ious, axis=1)
    best_iou = ious[np.arange(n), best_gt]
    matched = np.where(best_iou >= cfg.matched_threshold, best_gt, IGNORED)
    matched = np.where(best_iou < cfg.unmatched_threshold, NEGATIVE, matched)
    if cfg.force_match_groundtruth:
        best_anchor = np.argmax(ious, axis=0)
        # Reverse order so the lowest gt index wins a shared best anchor.
        for g in range(len(gt_boxes) - 1, -1, -1):
            a = best_anchor[g]
            if ious[a, g] > 0:
                matched[a] = g
    return _result(matched, gt_classes)


def match_bipartite(anchors, gt_boxes, gt_classes, cfg: MatcherConfig | None = None) -> MatchResult:
    """Greedy one-to-one matching by repeatedly taking the largest remaining IOU."""
    anchors, gt_boxes, gt_classes = _prepare(anchors, gt_boxes, gt_classes)
    matched = np.full(len(anchors), NEGATIVE)
    if len(gt_boxes) == 0 or len(anchors) == 0:
        return _result(matched, gt_classes)
    # (G, A) so a flat argmax picks the lowest (gt, anchor) pair among ties.
    ious = pairwise_iou(gt_boxes, anchors)
    for _ in range(min(ious.shape)):
        flat = int(np.argmax(ious))
        g, a = divmod(flat, ious.shape[1])
        if ious[g, a] <= 0:
            break
        matched[a] = g
        ious[g, :] = -1.0
        ious[:, a] = -1.0
    return _result(matched, gt_classes)


def match_box_center(anchors, gt_boxes, gt_classes, cfg: MatcherConfig | None = None) -> MatchResult:
    """Match each groundtruth to every anchor that contains its center.

    A center strictly inside an anchor claims it. A center that only touches
    anchor boundaries claims the lowest-index anchor it touches. Anchors
    claimed by several groundtruths go to the one with the highest IOU.
    """
    anchors, gt_boxes, gt_classes = _prepare(anchors, gt_boxes, gt_classes)
    matched = np.full(len(anchors), NEGATIVE)
    if len(gt_boxes) == 0 or len(anchors) == 0:
        return _result(matched, gt_classes)
    gyc, gxc, _, _ = centers_sizes(gt_boxes)
    a = anchors[:, None, :]
    inside = (a[..., 0] < gyc) & (gyc < a[..., 2]) & (a[..., 1] < gxc) & (gxc < a[..., 3])
    touching = (a[..., 0] <= gyc) & (gyc <= a[..., 2]) & (a[..., 1] <= gxc) & (gxc <= a[..., 3])
    claims = inside.copy()
    for g in np.flatnonzero(~inside.any(axis=0) & touching.any(axis=0)):
        claims[np.argmax(touching[:, g]), g] = True
    ious = pairwise_iou(anchors, gt_boxes)
    scored = np.where(claims, ious, -1.0)
    best = np.argmax(scored, axis=1)
    has = claims.any(axis=1)
    matched[has] = best[has]
    return _result(matched, gt_classes)


def match(anchors, gt_boxes, gt_classes, cfg: MatcherConfig) -> MatchResult:
    fn = {
        Strategy.ARGMAX: match_argmax,
        Strategy.BIPARTITE: match_bipartite,
        Strategy.BOX_CENTER: match_box_center,
    }[cfg.strategy]
    return fn(anchors, gt_boxes, gt_classes, cfg)


def sample_minibatch(m: MatchResult, batch_size: int, positive_fraction: float, seed) -> np.ndarray:
    """Sample up to ``batch_size`` anchors at a capped positive fraction.

    At most ``ceil(batch_size * positive_fraction)`` positives are drawn and
    the remainder is filled with negatives. Ignored anchors are never drawn.
    Returns sorted anchor indices.
    """
    if not 0.0 < positive_fraction < 1.0:
        raise ValueError("positive_fraction must lie in (0, 1)")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    pos = np.flatnonzero(m.positive)
    neg = np.flatnonzero(m.negative)
    n_pos = min(len(pos), math.ceil(batch_size * positive_fraction))
    n_neg = min(len(neg), batch_size - n_pos)
    chosen_pos = rng.choice(pos, size=n_pos, replace=False) if n_pos < len(pos) else pos
    chosen_neg = rng.choice(neg, size=n_neg, replace=False) if n_neg < len(neg) else neg
    return np.sort(np.concatenate([chosen_pos, chosen_neg]).astype(np.int64))
