"""Evaluation numerics for detection boxes, ROC curves and regression."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .mapalgebra import BBox, components_to_bboxes, normalize01, stack_max, threshold_mask

IOU_THRESHOLDS = (0.40, 0.45, 0.50, 0.55, 0.60, 0.65, 0.70, 0.75)
SWEEP_THRESHOLDS = (0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90)
LOSS_LAMBDA = 1e-5
BCE_EPS = 1e-7
TIE_TOL = 1e-12


@dataclass(frozen=True)
class MatchCounts:
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    sensitivity: float
    specificity: float


@dataclass(frozen=True)
class ConfusionStats:
    """Ratios from a 2x2 table; ``None`` where the denominator is zero."""

    accuracy: float | None
    ppv: float | None
    sensitivity: float | None
    specificity: float | None
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0


def iou(a: BBox, b: BBox) -> float:
    ix = max(0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def match_boxes(pred: Sequence[BBox], gt: Sequence[BBox], iou_t: float) -> MatchCounts:
    """Greedy one-to-one matching, highest IoU first; a pair counts when IoU >= iou_t."""
    if not 0.0 < iou_t <= 1.0:
        raise ValueError(f"IoU threshold must lie in (0, 1], got {iou_t}")
    pairs = []
    for i, p in enumerate(pred):
        for j, g in enumerate(gt):
            v = iou(p, g)
            if v >= iou_t:
                pairs.append((-v, i, j))
    pairs.sort()
    used_p, used_g = set(), set()
    for _, i, j in pairs:
        if i not in used_p and j not in used_g:
            used_p.add(i)
            used_g.add(j)
    tp = len(used_p)
    return MatchCounts(tp, len(pred) - tp, len(gt) - tp)


def rsna_precision(c: MatchCounts) -> float:
    denom = c.tp + c.fp + c.fn
    if denom == 0:
        return 1.0
    return c.tp / denom


def image_ap(pred: Sequence[BBox], gt: Sequence[BBox], thresholds: Sequence[float] = IOU_THRESHOLDS) -> float:
    return sum(rsna_precision(match_boxes(pred, gt, t)) for t in thresholds) / len(thresholds)


def map_score(dataset: Iterable[tuple[Sequence[BBox], Sequence[BBox]]]) -> float:
    """Mean over images of the per-image average precision."""
    aps = [image_ap(pred, gt) for pred, gt in dataset]
    if not aps:
        raise ValueError("map_score needs at least one image")
    return math.fsum(aps) / len(aps)


def boxes_from_map(m: np.ndarray, threshold: float) -> list[BBox]:
    return components_to_bboxes(threshold_mask(m, threshold))


def localization_sweep(
    maps: Sequence[np.ndarray],
    gts: Sequence[Sequence[BBox]],
    thresholds: Sequence[float] = SWEEP_THRESHOLDS,
) -> list[tuple[float, float]]:
    """mAP of boxes cut from each normalized map at every localization threshold."""
    if len(maps) != len(gts):
        raise ValueError("need one GT box list per map")
    return [(t, map_score((boxes_from_map(m, t), g) for m, g in zip(maps, gts))) for t in thresholds]


def reduce_heatmap_stack(stack: np.ndarray) -> np.ndarray:
    """Inference-time localization map: pixelwise max over the stack, rescaled to [0, 1]."""
    return normalize01(stack_max(stack))


# --------------------------------------------------------------------------
# ROC
# --------------------------------------------------------------------------


def _as_binary(labels) -> np.ndarray:
    labels = np.asarray(labels)
    if not np.all(np.isin(labels, (0, 1))):
        raise ValueError("labels must be 0/1")
    return labels.astype(bool)


def roc_curve(scores, labels) -> list[RocPoint]:
    """One point per distinct score (predict positive when score >= threshold), plus the +inf corner."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = _as_binary(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes present")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    tps = np.cumsum(y)
    fps = np.cumsum(~y)
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    points = [RocPoint(math.inf, 0.0, 1.0)]
    for k in last:
        points.append(RocPoint(float(s[k]), tps[k] / n_pos, 1.0 - fps[k] / n_neg))
    return points


def auc(curve: Sequence[RocPoint]) -> float:
    """Trapezoidal area under sensitivity vs (1 - specificity)."""
    fpr = np.array([1.0 - p.specificity for p in curve])
    tpr = np.array([p.sensitivity for p in curve])
    order = np.lexsort((tpr, fpr))
    fpr, tpr = fpr[order], tpr[order]
    return float(np.sum(np.diff(fpr) * 0.5 * (tpr[1:] + tpr[:-1])))


def roc_auc(scores, labels) -> float:
    return auc(roc_curve(scores, labels))


def optimal_operating_point(curve: Sequence[RocPoint]) -> RocPoint:
    """Point closest to perfect sensitivity and specificity; ties go to the lower threshold."""
    if not curve:
        raise ValueError("empty ROC curve")
    dist = [(1 - p.sensitivity) ** 2 + (1 - p.specificity) ** 2 for p in curve]
    best = min(dist)
    # distances equal in exact arithmetic can differ in the last bits
    tied = [p for p, d in zip(curve, dist) if d <= best + TIE_TOL]
    return min(tied, key=lambda p: p.threshold)


def confusion_stats(predictions, labels) -> ConfusionStats:
    pred = _as_binary(predictions)
    lab = _as_binary(labels)
    if pred.shape != lab.shape or pred.size == 0:
        raise ValueError("predictions and labels must be non-empty and equal length")
    tp = int(np.sum(pred & lab))
    fp = int(np.sum(pred & ~lab))
    tn = int(np.sum(~pred & ~lab))
    fn = int(np.sum(~pred & lab))

    def ratio(num, den):
        return num / den if den else None

    return ConfusionStats(
        accuracy=(tp + tn) / pred.size,
        ppv=ratio(tp, tp + fp),
        sensitivity=ratio(tp, tp + fn),
        specificity=ratio(tn, tn + fp),
        tp=tp, fp=fp, tn=tn, fn=fn,
    )


# --------------------------------------------------------------------------
# overlap and regression
# --------------------------------------------------------------------------


def _mask_pair(a, b):
    a, b = np.asarray(a, dtype=bool), np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a, b


def dice(a, b) -> float:
    a, b = _mask_pair(a, b)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.sum(a & b)) / total


def jaccard(a, b) -> float:
    a, b = _mask_pair(a, b)
    union = int(np.sum(a | b))
    if union == 0:
        return 1.0
    return int(np.sum(a & b)) / union


def _series(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D and equal length")
    if x.size < 2:
        raise ValueError("need at least two points")
    return x, y


def pearson_r(x, y) -> float:
    x, y = _series(x, y)
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise ValueError("correlation undefined for a constant series")
    return float(dx @ dy) / math.sqrt(sxx * syy)


def r_squared(x, y) -> float:
    return pearson_r(x, y) ** 2


def linfit(x, y) -> tuple[float, float]:
    """Least-squares slope and intercept of y on x."""
    x, y = _series(x, y)
    dx = x - x.mean()
    sxx = float(dx @ dx)
    if sxx == 0:
        raise ValueError("cannot fit a line to constant x")
    slope = float(dx @ (y - y.mean())) / sxx
    return slope, float(y.mean() - slope * x.mean())


def combined_loss(p: float, y: int, pred_map, gt_map, lam: float = LOSS_LAMBDA, eps: float = BCE_EPS) -> float:
    """Binary cross-entropy on the detection score plus lambda times the map MSE."""
    pred_map = np.asarray(pred_map, dtype=np.float64)
    gt_map = np.asarray(gt_map, dtype=np.float64)
    if pred_map.shape != gt_map.shape:
        raise ValueError("prediction and GT maps differ in shape")
    p = min(max(float(p), eps), 1.0 - eps)
    bce = -(y * math.log(p) + (1 - y) * math.log(1.0 - p))
    return bce + lam * float(np.mean((pred_map - gt_map) ** 2))
