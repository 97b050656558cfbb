"""Per-anchor detection loss and its analytic gradient.

For anchor ``a`` the loss is::

    alpha * [a positive] * loc_loss(target_a - loc_pred_a) + beta * xent(y_a, logits_a)

and the training objective is its mean over the sampled anchors. Ignored
anchors contribute nothing.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .matching import IGNORED, MatchResult


class LocationLoss(str, enum.Enum):
    SMOOTH_L1 = "smooth_l1"
    L2 = "l2"


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 1.0
    beta: float = 1.0
    location_loss: LocationLoss = LocationLoss.SMOOTH_L1
    num_classes: int = 3

    def __post_init__(self):
        object.__setattr__(self, "location_loss", LocationLoss(self.location_loss))
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta <= 0:
            raise ValueError("alpha and beta must be nonnegative with a positive sum")


def smooth_l1(x):
    """Huber loss with transition at 1, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    return np.where(ax < 1.0, 0.5 * x * x, ax - 0.5)


def smooth_l1_grad(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(np.abs(x) < 1.0, x, np.sign(x))


def l2(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * x


def location_loss(residual, kind=LocationLoss.SMOOTH_L1):
    """Location loss summed over the last (coordinate) axis."""
    fn = smooth_l1 if LocationLoss(kind) is LocationLoss.SMOOTH_L1 else l2
    return fn(residual).sum(axis=-1)


def _location_grad(residual, kind):
    if LocationLoss(kind) is LocationLoss.SMOOTH_L1:
        return smooth_l1_grad(residual)
    return np.asarray(residual, dtype=np.float64)


def log_softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))


def classification_loss(logits, label):
    """Softmax cross-entropy ``-log p[label]`` for one or many anchors."""
    lsm = log_softmax(logits)
    label = np.asarray(label)
    if lsm.ndim == 1:
        return float(-lsm[int(label)])
    return -np.take_along_axis(lsm, label.reshape(-1, 1), axis=-1)[:, 0]


def anchor_loss(match_entry: int, label: int, loc_pred, logits, target, cfg: LossConfig) -> float:
    """Loss of a single anchor.

    ``match_entry`` is the anchor's ``MatchResult.matched_gt`` value.

    Raises:
        ValueError: if a positive anchor has no target encoding.
    """
    if match_entry == IGNORED:
        return 0.0
    loss = cfg.beta * classification_loss(logits, label)
    if match_entry >= 0:
        if target is None:
            raise ValueError("positive anchor needs a target encoding")
        residual = np.asarray(target, dtype=np.float64) - np.asarray(loc_pred, dtype=np.float64)
        loss += cfg.alpha * float(location_loss(residual, cfg.location_loss))
    return float(loss)


def _per_sample(matches: MatchResult, loc_preds, logits, targets, sampled):
    sampled = np.asarray(sampled, dtype=np.int64).reshape(-1)
    if sampled.size == 0:
        raise ValueError("empty anchor sample")
    loc_preds = np.asarray(loc_preds, dtype=np.float64)
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    matched = matches.matched_gt[sampled]
    pos = matched >= 0
    active = matched != IGNORED
    if np.any(~np.isfinite(targets[sampled][pos])):
        raise ValueError("positive anchor needs a target encoding")
    return sampled, matched, pos, active, loc_preds, logits, targets


def total_loss(matches: MatchResult, loc_preds, logits, targets, sampled, cfg: LossConfig) -> float:
    """Mean anchor loss over ``sampled`` (indices may repeat)."""
    return loss_and_gradient(matches, loc_preds, logits, targets, sampled, cfg, need_grad=False)[0]


def loss_gradient(matches: MatchResult, loc_preds, logits, targets, sampled, cfg: LossConfig):
    """Analytic gradient of :func:`total_loss` w.r.t. ``(loc_preds, logits)``."""
    _, g_loc, g_cls = loss_and_gradient(matches, loc_preds, logits, targets, sampled, cfg)
    return g_loc, g_cls


def loss_and_gradient(matches, loc_preds, logits, targets, sampled, cfg: LossConfig, need_grad=True):
    """Return ``(loss, grad_loc, grad_logits)``; the grads are ``None`` when not needed.

    ``targets`` holds one encoding per anchor; rows of non-positive anchors
    are never read and may be NaN.
    """
    sampled, matched, pos, active, loc_preds, logits, targets = _per_sample(
        matches, loc_preds, logits, targets, sampled
    )
    n = len(sampled)
    labels = matches.labels[sampled]

    lsm = log_softmax(logits[sampled])
    cls_terms = -np.take_along_axis(lsm, labels[:, None], axis=1)[:, 0]
    residual = np.where(pos[:, None], targets[sampled] - loc_preds[sampled], 0.0)
    loc_terms = location_loss(residual, cfg.location_loss)
    per_anchor = np.where(active, cfg.beta * cls_terms, 0.0) + np.where(pos, cfg.alpha * loc_terms, 0.0)
    loss = float(np.sum(per_anchor) / n)
    if not need_grad:
        return loss, None, None

    g_cls_rows = np.exp(lsm)
    g_cls_rows[np.arange(n), labels] -= 1.0
    g_cls_rows *= np.where(active, cfg.beta / n, 0.0)[:, None]
    g_loc_rows = -_location_grad(residual, cfg.location_loss) * np.where(pos, cfg.alpha / n, 0.0)[:, None]

    g_loc = np.zeros_like(loc_preds)
    g_cls = np.zeros_like(logits)
    np.add.at(g_loc, sampled, g_loc_rows)
    np.add.at(g_cls, sampled, g_cls_rows)
    return loss, g_loc, g_cls
