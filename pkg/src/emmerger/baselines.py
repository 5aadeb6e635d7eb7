"""Reference baselines: greedy NMS and the random "monkey" box tosser."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .em_merger import Detection, ScoreSource
from .geometry import Box, boxes_to_array, centers_to_corners, nms_keep

MAX_ATTEMPTS = 100


@dataclass(frozen=True)
class DimStats:
    mu_w: float
    sigma_w: float
    mu_h: float
    sigma_h: float

    def __post_init__(self) -> None:
        if self.mu_w <= 0 or self.mu_h <= 0:
            raise ValueError("mean dimensions must be positive")
        if self.sigma_w < 0 or self.sigma_h < 0:
            raise ValueError("standard deviations must be nonnegative")

    @classmethod
    def from_boxes(cls, boxes: Sequence[Box]) -> "DimStats":
        arr = boxes_to_array(boxes)
        if len(arr) == 0:
            raise ValueError("need at least one box")
        return cls(float(arr[:, 2].mean()), float(arr[:, 2].std()),
                   float(arr[:, 3].mean()), float(arr[:, 3].std()))


def greedy_nms(
    detections: Sequence[Detection],
    iou_threshold: float = 0.5,
    score_source: "ScoreSource | str" = ScoreSource.OBJECTNESS,
) -> list[Detection]:
    """Keep the best-scoring detections, dropping any that overlap a kept one by more than ``iou_threshold``."""
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError("iou_threshold must lie in [0, 1]")
    if not detections:
        return []
    corners = centers_to_corners(boxes_to_array(d.box for d in detections))
    scores = np.array([d.score(score_source) for d in detections])
    return [detections[i] for i in nms_keep(corners, scores, iou_threshold)]


def monkey(k: int, stats: DimStats, image_w: float, image_h: float, seed: int = 0) -> list[Box]:
    """Toss ``k`` random boxes into the image.

    Upper-left corners are uniform over the image; widths and heights are
    normal with the given statistics. A box is redrawn until it has positive
    size and fits inside the image. After ``MAX_ATTEMPTS`` failures its size
    is clamped to [1, image dim] and the corner shifted so it fits.
    """
    if k < 0:
        raise ValueError("k must be nonnegative")
    rng = np.random.Generator(np.random.PCG64(seed))
    out: list[Box] = []
    for _ in range(k):
        for _ in range(MAX_ATTEMPTS):
            x, y = rng.uniform(0.0, image_w), rng.uniform(0.0, image_h)
            w = rng.normal(stats.mu_w, stats.sigma_w)
            h = rng.normal(stats.mu_h, stats.sigma_h)
            if w > 0 and h > 0 and x + w <= image_w and y + h <= image_h:
                break
        else:
            w = float(np.clip(w, min(1.0, image_w), image_w))
            h = float(np.clip(h, min(1.0, image_h), image_h))
            x = min(x, image_w - w)
            y = min(y, image_h - h)
        out.append(Box(x + w / 2.0, y + h / 2.0, w, h))
    return out
