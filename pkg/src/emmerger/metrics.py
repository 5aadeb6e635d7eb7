"""COCO-style detection metrics, counting errors and the Soft-IoU target/loss.

Prediction and ground-truth arguments are either a single image (a list) or
a mapping ``image_id -> list``. Predictions are ``(Box, confidence)`` pairs;
ground truth is a list of boxes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np

from .geometry import Box, boxes_to_array, centers_to_corners, iou, iou_matrix

COCO_THRESHOLDS = tuple(np.round(np.linspace(0.5, 0.95, 10), 2).tolist())
RECALL_POINTS = np.linspace(0.0, 1.0, 101)
LOSS_EPS = 1e-7

Prediction = tuple[Box, float]
PerImage = Union[Sequence, Mapping]


@dataclass(frozen=True)
class EvalReport:
    ap: float
    ap75: float
    ar300: float
    p_at_r50: float
    mae: float
    rmse: float

    KEYS = ("ap", "ap75", "ar300", "p_at_r50", "mae", "rmse")

    def as_dict(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in self.KEYS}


@dataclass(frozen=True)
class Matching:
    """Greedy one-to-one matching for one image.

    ``order`` lists prediction indices by descending confidence;
    ``pred_to_gt[i]`` is the matched GT index for prediction ``i`` or -1.
    """

    order: list[int]
    pred_to_gt: list[int]

    @property
    def true_positives(self) -> int:
        return sum(1 for g in self.pred_to_gt if g >= 0)


def _images(preds: PerImage, gt: PerImage) -> tuple[dict, dict]:
    if isinstance(preds, Mapping) != isinstance(gt, Mapping):
        raise TypeError("preds and gt must both be per-image mappings or both single-image lists")
    if not isinstance(preds, Mapping):
        return {0: list(preds)}, {0: list(gt)}
    return dict(preds), dict(gt)


# -- Soft-IoU training signal ------------------------------------------------


def soft_iou_targets(pred_boxes: Sequence[Box], gt: Sequence[Box]) -> list[float]:
    """IoU of each prediction with the GT box whose center is nearest its own."""
    if not gt:
        return [0.0] * len(pred_boxes)
    gt_arr = boxes_to_array(gt)
    out = []
    for b in pred_boxes:
        d2 = (gt_arr[:, 0] - b.cx) ** 2 + (gt_arr[:, 1] - b.cy) ** 2
        out.append(iou(b, gt[int(np.argmin(d2))]))
    return out


def soft_iou_loss(targets: Sequence[float], predictions: Sequence[float]) -> float:
    """Mean binary cross-entropy between IoU targets and predicted Soft-IoU scores."""
    t = np.asarray(targets, dtype=np.float64)
    p = np.asarray(predictions, dtype=np.float64)
    if t.shape != p.shape or t.ndim != 1:
        raise ValueError(f"targets and predictions must be equal-length 1-D, got {t.shape} and {p.shape}")
    if len(t) == 0:
        raise ValueError("need at least one sample")
    p = np.clip(p, LOSS_EPS, 1.0 - LOSS_EPS)
    return float(-np.mean(t * np.log(p) + (1.0 - t) * np.log1p(-p)))


# -- matching and PR curves ----------------------------------------------------


def match_detections(preds: Sequence[Prediction], gt: Sequence[Box], iou_threshold: float = 0.5) -> Matching:
    """Greedy COCO matching: by descending confidence, take the free GT with the highest IoU >= threshold."""
    conf = np.array([c for _, c in preds], dtype=np.float64)
    order = np.argsort(-conf, kind="stable").tolist()
    pred_to_gt = [-1] * len(preds)
    if not preds or not gt:
        return Matching(order, pred_to_gt)
    ious = iou_matrix(
        centers_to_corners(boxes_to_array(b for b, _ in preds)),
        centers_to_corners(boxes_to_array(gt)),
    )
    taken = np.zeros(len(gt), dtype=bool)
    for i in order:
        cand = np.where(taken, -1.0, ious[i])
        j = int(np.argmax(cand))
        if cand[j] >= iou_threshold and not taken[j]:
            taken[j] = True
            pred_to_gt[i] = j
    return Matching(order, pred_to_gt)


def _top(preds: Sequence[Prediction], max_detections: int | None) -> list[Prediction]:
    if max_detections is None or len(preds) <= max_detections:
        return list(preds)
    conf = np.array([c for _, c in preds])
    keep = np.sort(np.argsort(-conf, kind="stable")[:max_detections])
    return [preds[i] for i in keep]


def _pr_curve(preds: Mapping, gt: Mapping, iou_threshold: float, max_detections: int | None):
    """Cumulative (recall, precision) over all images, sorted by confidence."""
    confs, hits = [], []
    n_gt = 0
    for image_id in sorted(set(preds) | set(gt), key=str):
        p = _top(preds.get(image_id, []), max_detections)
        g = gt.get(image_id, [])
        n_gt += len(g)
        m = match_detections(p, g, iou_threshold)
        for i in m.order:
            confs.append(p[i][1])
            hits.append(m.pred_to_gt[i] >= 0)
    order = np.argsort(-np.asarray(confs, dtype=np.float64), kind="mergesort")
    tp = np.cumsum(np.asarray(hits, dtype=np.float64)[order])
    fp = np.cumsum(1.0 - np.asarray(hits, dtype=np.float64)[order])
    recall = tp / n_gt if n_gt else np.zeros_like(tp)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = tp / np.maximum(tp + fp, np.finfo(np.float64).eps)
    return recall, precision, n_gt


def _envelope(precision: np.ndarray) -> np.ndarray:
    return np.maximum.accumulate(precision[::-1])[::-1]


def _interp(recall: np.ndarray, precision: np.ndarray, levels: np.ndarray) -> np.ndarray:
    env = _envelope(precision)
    idx = np.searchsorted(recall, levels, side="left")
    out = np.zeros(len(levels))
    ok = idx < len(env)
    out[ok] = env[idx[ok]]
    return out


def average_precision(
    preds: PerImage,
    gt: PerImage,
    iou_thresholds: Sequence[float] = COCO_THRESHOLDS,
    max_detections: int | None = 300,
) -> float:
    """101-point interpolated AP, averaged over ``iou_thresholds``.

    With no ground truth at all, AP is 1 if there are also no predictions
    and 0 otherwise.
    """
    if len(iou_thresholds) == 0:
        raise ValueError("need at least one IoU threshold")
    preds, gt = _images(preds, gt)
    n_gt = sum(len(v) for v in gt.values())
    n_pred = sum(len(v) for v in preds.values())
    if n_gt == 0:
        return 1.0 if n_pred == 0 else 0.0
    scores = []
    for t in iou_thresholds:
        recall, precision, _ = _pr_curve(preds, gt, t, max_detections)
        scores.append(_interp(recall, precision, RECALL_POINTS).mean())
    return float(np.mean(scores))


def average_recall(
    preds: PerImage,
    gt: PerImage,
    max_detections: int = 300,
    iou_thresholds: Sequence[float] = COCO_THRESHOLDS,
) -> float:
    """Recall using each image's top ``max_detections`` predictions, averaged over thresholds."""
    preds, gt = _images(preds, gt)
    n_gt = sum(len(v) for v in gt.values())
    if n_gt == 0:
        return 1.0 if sum(len(v) for v in preds.values()) == 0 else 0.0
    recalls = []
    for t in iou_thresholds:
        recall, _, _ = _pr_curve(preds, gt, t, max_detections)
        recalls.append(recall[-1] if len(recall) else 0.0)
    return float(np.mean(recalls))


def precision_at_recall(
    preds: PerImage,
    gt: PerImage,
    recall_level: float = 0.5,
    iou_threshold: float = 0.75,
    max_detections: int | None = 300,
) -> float:
    """Envelope-interpolated precision at ``recall_level``; 0 if that recall is never reached."""
    if not 0.0 <= recall_level <= 1.0:
        raise ValueError("recall_level must lie in [0, 1]")
    preds, gt = _images(preds, gt)
    recall, precision, n_gt = _pr_curve(preds, gt, iou_threshold, max_detections)
    if n_gt == 0 or len(recall) == 0:
        return 0.0
    return float(_interp(recall, precision, np.array([recall_level]))[0])


def count_errors(pred_counts: Sequence[int], true_counts: Sequence[int]) -> tuple[float, float]:
    """(MAE, RMSE) between predicted and true per-image object counts."""
    if len(pred_counts) != len(true_counts):
        raise ValueError("count lists must have equal length")
    if len(pred_counts) == 0:
        raise ValueError("need at least one image")
    diff = np.asarray(pred_counts, dtype=np.float64) - np.asarray(true_counts, dtype=np.float64)
    return float(np.mean(np.abs(diff))), float(math.sqrt(np.mean(diff * diff)))


def evaluate(preds: PerImage, gt: PerImage) -> EvalReport:
    """Full report: AP@[.5:.95], AP@.75, AR@300, P at R=.5 (IoU .75), count MAE/RMSE."""
    preds, gt = _images(preds, gt)
    ids = sorted(set(preds) | set(gt), key=str)
    mae, rmse = count_errors([len(preds.get(i, [])) for i in ids], [len(gt.get(i, [])) for i in ids])
    return EvalReport(
        ap=average_precision(preds, gt),
        ap75=average_precision(preds, gt, (0.75,)),
        ar300=average_recall(preds, gt, 300),
        p_at_r50=precision_at_recall(preds, gt, 0.5, 0.75),
        mae=mae,
        rmse=rmse,
    )
