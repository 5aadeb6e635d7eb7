"""Axis-aligned boxes in center form and continuous-area IoU."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

Corners = tuple[float, float, float, float]


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by its center and size, in pixels."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self) -> None:
        vals = (self.cx, self.cy, self.w, self.h)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError(f"box coordinates must be finite, got {vals}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box width and height must be positive, got w={self.w}, h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h


def to_corner(b: Box) -> Corners:
    return (b.cx - b.w / 2.0, b.cy - b.h / 2.0, b.cx + b.w / 2.0, b.cy + b.h / 2.0)


def from_corner(corners: Sequence[float]) -> Box:
    x1, y1, x2, y2 = (float(v) for v in corners)
    if not (x1 < x2 and y1 < y2):
        raise ValueError(f"degenerate corner box {(x1, y1, x2, y2)}: need x1 < x2 and y1 < y2")
    return Box((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)


def _iou_corners(a: Corners, b: Corners) -> float:
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes (0 when they do not overlap)."""
    return _iou_corners(to_corner(a), to_corner(b))


def boxes_to_array(boxes: Iterable[Box]) -> np.ndarray:
    """Stack boxes into an (n, 4) array of (cx, cy, w, h)."""
    arr = np.array([(b.cx, b.cy, b.w, b.h) for b in boxes], dtype=np.float64)
    return arr.reshape(-1, 4)


def centers_to_corners(arr: np.ndarray) -> np.ndarray:
    """(n, 4) center form -> (n, 4) corner form, same arithmetic as :func:`to_corner`."""
    arr = np.asarray(arr, dtype=np.float64)
    half_w = arr[:, 2] / 2.0
    half_h = arr[:, 3] / 2.0
    return np.stack(
        [arr[:, 0] - half_w, arr[:, 1] - half_h, arr[:, 0] + half_w, arr[:, 1] + half_h], axis=1
    )


def iou_one_to_many(corner: np.ndarray, corners: np.ndarray) -> np.ndarray:
    """IoU of one corner-form box against each row of ``corners``."""
    iw = np.minimum(corner[2], corners[:, 2]) - np.maximum(corner[0], corners[:, 0])
    ih = np.minimum(corner[3], corners[:, 3]) - np.maximum(corner[1], corners[:, 1])
    overlap = (iw > 0.0) & (ih > 0.0)
    inter = np.where(overlap, iw * ih, 0.0)
    area_a = (corner[2] - corner[0]) * (corner[3] - corner[1])
    area_b = (corners[:, 2] - corners[:, 0]) * (corners[:, 3] - corners[:, 1])
    union = area_a + area_b - inter
    return np.where(overlap, inter / union, 0.0)


def iou_matrix(corners_a: np.ndarray, corners_b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between two sets of corner-form boxes, shape (len(a), len(b))."""
    a = np.asarray(corners_a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(corners_b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    overlap = (iw > 0.0) & (ih > 0.0)
    inter = np.where(overlap, iw * ih, 0.0)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(overlap, inter / union, 0.0)


def nms_keep(corners: np.ndarray, scores: np.ndarray, iou_threshold: float) -> list[int]:
    """Greedy suppression over corner-form boxes.

    Visits boxes by descending score (lowest index first on ties) and keeps a
    box iff its IoU with every already-kept box is <= ``iou_threshold``.
    Returns kept indices in visiting order.
    """
    corners = np.asarray(corners, dtype=np.float64).reshape(-1, 4)
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    suppressed = np.zeros(len(order), dtype=bool)
    keep: list[int] = []
    for pos, idx in enumerate(order):
        if suppressed[pos]:
            continue
        keep.append(int(idx))
        rest = order[pos + 1 :]
        if len(rest) == 0:
            break
        overlaps = iou_one_to_many(corners[idx], corners[rest])
        suppressed[pos + 1 :] |= overlaps > iou_threshold
    return keep
