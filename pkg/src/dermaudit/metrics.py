"""Segmentation and classification metric suite.

Zero-denominator conventions: a ratio whose denominator is zero is
*undefined*, represented as None, never silently 0; aggregate reports
exclude undefined values from means and carry an exclusion count. An
empty prediction against a nonempty truth yields IoU = Dice = recall = 0
and an infinite Hausdorff sentinel. An empty truth mask is an error.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import binary_erosion
from scipy.spatial import cKDTree

from .errors import (DimensionMismatchError, EmptyTruthError,
                     MissingPredictionError, SingleClassError)

HAUSDORFF_INF = float("inf")


@dataclass(frozen=True)
class SegmentationScores:
    iou: float
    dice: float
    precision: float | None
    recall: float
    specificity: float | None
    hausdorff_px: float


@dataclass(frozen=True)
class ClassificationScores:
    accuracy: float
    precision: float | None
    recall: float | None
    f1: float | None
    auc: float | None
    confusion: tuple  # ((tn, fp), (fn, tp))
    loss: float
    auc_error: str = ""


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def boundary_points(mask: np.ndarray) -> np.ndarray:
    """(N, 2) row/col coordinates of the 8-connected boundary of a mask.

    A mask pixel is boundary if any of its 8 neighbours (image border
    counts as background) is outside the mask.
    """
    mask = np.asarray(mask, dtype=bool)
    interior = binary_erosion(mask, structure=np.ones((3, 3), dtype=bool),
                              border_value=0)
    return np.argwhere(mask & ~interior)


def hausdorff_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric Hausdorff distance (Euclidean, pixels) between mask boundaries.

    Exact maximum over both directed distances. Returns the infinity
    sentinel if exactly one mask is empty, and 0.0 if both are empty.
    """
    pa, pb = boundary_points(a), boundary_points(b)
    if len(pa) == 0 and len(pb) == 0:
        return 0.0
    if len(pa) == 0 or len(pb) == 0:
        return HAUSDORFF_INF
    d_ab = cKDTree(pb).query(pa)[0].max()
    d_ba = cKDTree(pa).query(pb)[0].max()
    return float(max(d_ab, d_ba))


def seg_scores(pred: np.ndarray, truth: np.ndarray) -> SegmentationScores:
    """All six segmentation metrics for one predicted/truth mask pair."""
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise DimensionMismatchError(f"pred {pred.shape} vs truth {truth.shape}")
    if not truth.any():
        raise EmptyTruthError("segmentation metrics undefined for empty truth mask")

    tp = int((pred & truth).sum())
    fp = int((pred & ~truth).sum())
    fn = int((~pred & truth).sum())
    tn = int((~pred & ~truth).sum())

    union = tp + fp + fn
    return SegmentationScores(
        iou=tp / union,
        dice=2 * tp / (2 * tp + fp + fn),
        precision=_ratio(tp, tp + fp),
        recall=tp / (tp + fn),
        specificity=_ratio(tn, tn + fp),
        hausdorff_px=hausdorff_distance(pred, truth),
    )


def roc_auc(scores, labels) -> float:
    """ROC-AUC by trapezoidal integration of the exact step curve.

    Computed via the rank statistic with average ranks, which equals
    pairwise concordance with half credit for score ties. Raises
    SingleClassError when only one label class is present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("AUC needs at least one sample of each class")

    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0  # average 1-based rank
        i = j + 1
    rank_sum_pos = ranks[labels == 1].sum()
    return float((rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def cls_scores(predictions, threshold: float = 0.5) -> ClassificationScores:
    """Classification metrics over (score, label) pairs.

    Scores are in [0, 1]; labels are {0, 1}. The confusion matrix uses
    `score >= threshold` as the positive call. AUC is undefined (None,
    with auc_error set) when a class is missing; the remaining metrics
    are still computed.
    """
    pairs = list(predictions)
    if not pairs:
        raise ValueError("empty prediction list")
    scores = np.array([p[0] for p in pairs], dtype=np.float64)
    labels = np.array([p[1] for p in pairs], dtype=np.int64)

    predicted = scores >= threshold
    tp = int((predicted & (labels == 1)).sum())
    fp = int((predicted & (labels == 0)).sum())
    fn = int((~predicted & (labels == 1)).sum())
    tn = int((~predicted & (labels == 0)).sum())

    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    if precision is None or recall is None or precision + recall == 0:
        f1 = None
    else:
        f1 = 2 * precision * recall / (precision + recall)

    try:
        auc, auc_error = roc_auc(scores, labels), ""
    except SingleClassError as exc:
        auc, auc_error = None, f"SingleClass: {exc}"

    eps = 1e-12
    clipped = np.clip(scores, eps, 1.0 - eps)
    loss = float(-np.mean(labels * np.log(clipped)
                          + (1 - labels) * np.log(1.0 - clipped)))

    return ClassificationScores(
        accuracy=(tp + tn) / len(pairs),
        precision=precision,
        recall=recall,
        f1=f1,
        auc=auc,
        confusion=((tn, fp), (fn, tp)),
        loss=loss,
        auc_error=auc_error,
    )


def mean_excluding_none(values) -> tuple[float | None, int]:
    """Mean of the defined entries plus the count of excluded (None/inf) ones."""
    values = list(values)
    kept = [v for v in values if v is not None and math.isfinite(v)]
    excluded = len(values) - len(kept)
    if not kept:
        return None, excluded
    return sum(kept) / len(kept), excluded


@dataclass
class SegEvalReport:
    """Aggregate of per-image segmentation scores over a run."""
    per_image: dict               # image_id -> SegmentationScores
    means: dict                   # metric name -> mean over defined values (or None)
    excluded: dict                # metric name -> count excluded from the mean

    METRICS = ("iou", "dice", "precision", "recall", "specificity", "hausdorff_px")


def evaluate_segmentation(preds: dict, truths: dict) -> SegEvalReport:
    """Score every truth mask against its prediction and aggregate.

    `preds` and `truths` map image_id to a boolean mask. Every truth id
    must have a prediction (MissingPredictionError otherwise); extra
    predictions are ignored. Undefined ratios and infinite Hausdorff
    sentinels are excluded from the corpus means, with counts.
    """
    missing = set(truths) - set(preds)
    if missing:
        raise MissingPredictionError(missing)

    per_image = {}
    for image_id in sorted(truths):
        per_image[image_id] = seg_scores(preds[image_id], truths[image_id])

    means, excluded = {}, {}
    for name in SegEvalReport.METRICS:
        means[name], excluded[name] = mean_excluding_none(
            getattr(s, name) for s in per_image.values())
    return SegEvalReport(per_image=per_image, means=means, excluded=excluded)
