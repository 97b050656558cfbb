"""COCO-style box evaluation: AP over IOU thresholds .50:.05:.95, size strata and AR@100.

Matching and accumulation follow the COCO toolkit's conventions: per image
and class, detections are ranked by score and truncated to ``max_dets``;
each is matched to the unmatched groundtruth of highest IOU (at least the
threshold). Groundtruth outside the evaluated size band is "ignored":
detections matched to it, and unmatched detections outside the band, are
dropped from the PR curve. Precision is made monotone and sampled at 101
recall points. Undefined entries (no groundtruth) are NaN and excluded from
every mean.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .geometry import area, as_boxes, pairwise_iou
from .postprocess import Detections, score_order

IOU_THRESHOLDS = np.linspace(0.5, 0.95, int(np.round((0.95 - 0.5) / 0.05)) + 1)
RECALL_POINTS = np.linspace(0.0, 1.0, int(np.round(1.0 / 0.01)) + 1)
AREA_RANGES = {
    "all": (0.0, np.inf),
    "small": (0.0, 32.0**2),
    "medium": (32.0**2, 96.0**2),
    "large": (96.0**2, np.inf),
}
MAX_DETS = 100


@dataclass
class GroundTruth:
    """Groundtruth of one image. ``area_scale`` converts pixel areas to size-band units."""

    boxes: np.ndarray
    classes: np.ndarray
    area_scale: float = 1.0

    def __post_init__(self):
        self.boxes = as_boxes(self.boxes).reshape(-1, 4)
        self.classes = np.asarray(self.classes, dtype=np.int64).reshape(-1)
        if len(self.boxes) != len(self.classes):
            raise ValueError("boxes and classes must have equal length")

    def __len__(self) -> int:
        return len(self.classes)


@dataclass(frozen=True)
class MatchFlags:
    """Per-detection outcome: ``tp`` (matched), ``ignored``, and the matched gt index or -1."""

    tp: np.ndarray
    ignored: np.ndarray
    gt_index: np.ndarray


@dataclass
class EvalResult:
    map: float
    map50: float
    map75: float
    map_small: float
    map_medium: float
    map_large: float
    ar100: float
    ar_small: float
    ar_medium: float
    ar_large: float
    categories: list[int] = field(default_factory=list)
    per_category_ap: list[float] = field(default_factory=list)
    # (class, band, threshold) AP and recall; bands in AREA_RANGES order.
    ap_table: np.ndarray | None = field(default=None, repr=False)
    recall_table: np.ndarray | None = field(default=None, repr=False)
    iou_thresholds: np.ndarray | None = field(default=None, repr=False)

    SCALARS = ("map", "map50", "map75", "map_small", "map_medium", "map_large", "ar100", "ar_small", "ar_medium", "ar_large")

    def to_dict(self) -> dict:
        def clean(v):
            return None if v is None or not np.isfinite(v) else float(v)

        d = {k: clean(getattr(self, k)) for k in self.SCALARS}
        d["per_category_ap"] = {str(c): clean(v) for c, v in zip(self.categories, self.per_category_ap)}
        return d

    def band_map(self, band: str = "all", iou: float | None = None) -> float:
        """mAP within a size band, at one IOU threshold or averaged over all of them."""
        table = self.ap_table[:, list(AREA_RANGES).index(band), :]
        if iou is not None:
            table = table[:, int(np.argmin(np.abs(self.iou_thresholds - iou)))]
        return _nanmean(table)


def greedy_match_detections(det_boxes, gt_boxes, iou_threshold: float, gt_ignore=None, ious=None) -> MatchFlags:
    """Match detections (already in score order) to groundtruth of one image and class.

    Each detection takes the unmatched non-ignored gt with the highest IOU
    >= ``iou_threshold`` (falling back to ignored gts), ties to the lowest
    index. Each gt is used at most once.
    """
    det_boxes = as_boxes(det_boxes).reshape(-1, 4)
    gt_boxes = as_boxes(gt_boxes).reshape(-1, 4)
    nd, ng = len(det_boxes), len(gt_boxes)
    gt_ignore = np.zeros(ng, dtype=bool) if gt_ignore is None else np.asarray(gt_ignore, dtype=bool)
    tp = np.zeros(nd, dtype=bool)
    ignored = np.zeros(nd, dtype=bool)
    gt_index = np.full(nd, -1, dtype=np.int64)
    if nd == 0 or ng == 0:
        return MatchFlags(tp, ignored, gt_index)
    if ious is None:
        ious = pairwise_iou(det_boxes, gt_boxes)
    eligible = ious >= min(iou_threshold, 1 - 1e-10)
    used = np.zeros(ng, dtype=bool)
    for d in np.flatnonzero(eligible.any(axis=1)):
        cand = eligible[d] & ~used
        if not cand.any():
            continue
        primary = cand & ~gt_ignore
        pool = primary if primary.any() else cand
        g = int(np.argmax(np.where(pool, ious[d], -1.0)))
        used[g] = True
        tp[d] = True
        gt_index[d] = g
        ignored[d] = gt_ignore[g]
    return MatchFlags(tp & ~ignored, ignored, gt_index)


def pr_curve(tp_flags, num_gt: int):
    """Cumulative precision/recall of detections in rank order."""
    tp = np.asarray(tp_flags, dtype=bool)
    tp_cum = np.cumsum(tp, dtype=np.float64)
    fp_cum = np.cumsum(~tp, dtype=np.float64)
    recall = tp_cum / num_gt
    precision = tp_cum / np.maximum(tp_cum + fp_cum, np.finfo(np.float64).tiny)
    return precision, recall


def average_precision(tp_flags, num_gt: int) -> float:
    """101-point interpolated AP of score-ordered TP/FP flags; NaN when ``num_gt == 0``."""
    if num_gt == 0:
        return float("nan")
    if len(tp_flags) == 0:
        return 0.0
    precision, recall = pr_curve(tp_flags, num_gt)
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    q = np.where(idx < len(precision), precision[np.minimum(idx, len(precision) - 1)], 0.0)
    return float(np.mean(q))


def _nanmean(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0 or np.all(np.isnan(x)):
        return float("nan")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return float(np.nanmean(x))


def evaluate(
    dets: dict,
    gts: dict,
    categories=None,
    max_dets: int = MAX_DETS,
    iou_thresholds=IOU_THRESHOLDS,
) -> EvalResult:
    """Evaluate detections against groundtruth.

    Args:
        dets: image id -> :class:`Detections`. Missing images have no detections.
        gts: image id -> :class:`GroundTruth`. Defines the evaluated image set.
        categories: class ids to evaluate; defaults to every class seen in ``gts``.

    Raises:
        ValueError: if there are no categories, or detections reference unknown images.
    """
    if categories is None:
        categories = sorted({int(c) for g in gts.values() for c in g.classes})
    categories = [int(c) for c in categories]
    if not categories:
        raise ValueError("no categories to evaluate")
    unknown = set(dets) - set(gts)
    if unknown:
        raise ValueError(f"detections for unknown images: {sorted(unknown)[:5]}")
    thresholds = np.asarray(iou_thresholds, dtype=np.float64)
    bands = list(AREA_RANGES.values())
    nk, na, nt = len(categories), len(bands), len(thresholds)
    ap = np.full((nk, na, nt), np.nan)
    rec = np.full((nk, na, nt), np.nan)
    image_ids = list(gts)

    for ki, cat in enumerate(categories):
        per_image = []
        for img in image_ids:
            g = gts[img]
            gmask = g.classes == cat
            gb = g.boxes[gmask]
            d = dets.get(img)
            if d is None or len(d) == 0:
                db, ds = np.zeros((0, 4)), np.zeros(0)
            else:
                dmask = d.classes == cat
                db, ds = d.boxes[dmask], d.scores[dmask]
            order = score_order(ds)[:max_dets]
            db, ds = db[order], ds[order]
            if len(gb) == 0 and len(db) == 0:
                continue
            ious = pairwise_iou(db, gb) if len(db) and len(gb) else np.zeros((len(db), len(gb)))
            per_image.append((db, ds, gb, area(gb) * g.area_scale, area(db) * g.area_scale, ious))

        for ai, (lo, hi) in enumerate(bands):
            scores, tps, keeps = [[] for _ in range(nt)], [[] for _ in range(nt)], [[] for _ in range(nt)]
            num_gt = 0
            for db, ds, gb, garea, darea, ious in per_image:
                gign = (garea < lo) | (garea >= hi)
                # Put non-ignored gts first, as the reference toolkit does.
                gorder = np.argsort(gign, kind="stable")
                gb_o, gign_o, ious_o = gb[gorder], gign[gorder], ious[:, gorder]
                num_gt += int((~gign).sum())
                d_out = (darea < lo) | (darea >= hi)
                for ti, t in enumerate(thresholds):
                    m = greedy_match_detections(db, gb_o, t, gign_o, ious_o)
                    drop = m.ignored | ((m.gt_index < 0) & d_out)
                    scores[ti].append(ds[~drop])
                    tps[ti].append(m.tp[~drop])
            if num_gt == 0:
                continue
            for ti in range(nt):
                s = np.concatenate(scores[ti]) if scores[ti] else np.zeros(0)
                f = np.concatenate(tps[ti]) if tps[ti] else np.zeros(0, dtype=bool)
                f = f[score_order(s)]
                ap[ki, ai, ti] = average_precision(f, num_gt)
                rec[ki, ai, ti] = f.sum() / num_gt

    t50 = int(np.argmin(np.abs(thresholds - 0.5)))
    t75 = int(np.argmin(np.abs(thresholds - 0.75)))
    return EvalResult(
        map=_nanmean(ap[:, 0, :]),
        map50=_nanmean(ap[:, 0, t50]),
        map75=_nanmean(ap[:, 0, t75]),
        map_small=_nanmean(ap[:, 1, :]),
        map_medium=_nanmean(ap[:, 2, :]),
        map_large=_nanmean(ap[:, 3, :]),
        ar100=_nanmean(rec[:, 0, :]),
        ar_small=_nanmean(rec[:, 1, :]),
        ar_medium=_nanmean(rec[:, 2, :]),
        ar_large=_nanmean(rec[:, 3, :]),
        categories=categories,
        per_category_ap=[_nanmean(ap[k, 0, :]) for k in range(nk)],
        ap_table=ap,
        recall_table=rec,
        iou_thresholds=thresholds,
    )
