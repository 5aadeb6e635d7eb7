"""Synthetic densely packed scenes and a simulated duplicate-happy detector.

Randomness comes from ``numpy.random.Generator(PCG64(seed))``; draws are
made in a fixed documented order (see :func:`simulate_detections`) so a seed
fully determines the output.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Union

import numpy as np

from .config import read_key_values, coerce_fields
from .em_merger import Detection
from .geometry import Box, iou

MAX_IMAGE_DIM = 65536.0


class ObjectnessLaw(str, Enum):
    CONSTANT = "constant"
    IOU_CORRELATED = "iou_correlated"


@dataclass(frozen=True)
class SceneSpec:
    """Grid scene layout plus detector noise model.

    The defaults give a 12x12 shelf of 40x60 px items, about the object
    density of a retail shelf photo.
    """

    rows: int = 12
    cols: int = 12
    box_w: float = 40.0
    box_h: float = 60.0
    gap: float = 4.0
    margin: float = 20.0
    duplicates_min: int = 5
    duplicates_max: int = 15
    center_jitter_frac: float = 0.05
    dim_jitter_frac: float = 0.05
    score_noise: float = 0.0
    objectness_law: ObjectnessLaw = ObjectnessLaw.CONSTANT
    objectness_value: float = 0.9

    def __post_init__(self) -> None:
        object.__setattr__(self, "objectness_law", ObjectnessLaw(self.objectness_law))
        if self.rows < 1 or self.cols < 1:
            raise ValueError("rows and cols must be at least 1")
        if self.box_w <= 0 or self.box_h <= 0:
            raise ValueError("box_w and box_h must be positive")
        if self.gap < 0 or self.margin < 0:
            raise ValueError("gap and margin must be nonnegative")
        if not 1 <= self.duplicates_min <= self.duplicates_max:
            raise ValueError("need 1 <= duplicates_min <= duplicates_max")
        if min(self.center_jitter_frac, self.dim_jitter_frac, self.score_noise) < 0:
            raise ValueError("jitter fractions and score noise must be nonnegative")
        if not 0.0 <= self.objectness_value <= 1.0:
            raise ValueError("objectness_value must lie in [0, 1]")

    @property
    def image_size(self) -> tuple[float, float]:
        w = 2 * self.margin + self.cols * self.box_w + (self.cols - 1) * self.gap
        h = 2 * self.margin + self.rows * self.box_h + (self.rows - 1) * self.gap
        return w, h

    def replace(self, **changes) -> "SceneSpec":
        return dataclasses.replace(self, **changes)


def load_scene_spec(path: Union[str, Path]) -> SceneSpec:
    """Read a ``key = value`` scene file; unknown keys are an error."""
    return SceneSpec(**coerce_fields(SceneSpec, read_key_values(path)))


def generate_scene(spec: SceneSpec, seed: int = 0) -> tuple[list[Box], float, float]:
    """Ground-truth grid boxes (row-major) and the image size.

    The layout is exact; ``seed`` is accepted for interface symmetry only.
    """
    image_w, image_h = spec.image_size
    if image_w > MAX_IMAGE_DIM or image_h > MAX_IMAGE_DIM:
        raise ValueError(f"scene {image_w:g}x{image_h:g} exceeds the {MAX_IMAGE_DIM:g} px limit")
    boxes = []
    for r in range(spec.rows):
        cy = spec.margin + r * (spec.box_h + spec.gap) + spec.box_h / 2.0
        for c in range(spec.cols):
            cx = spec.margin + c * (spec.box_w + spec.gap) + spec.box_w / 2.0
            boxes.append(Box(cx, cy, spec.box_w, spec.box_h))
    return boxes, image_w, image_h


def _objectness(spec: SceneSpec, true_iou: float, noise: float) -> float:
    if spec.objectness_law is ObjectnessLaw.CONSTANT:
        return spec.objectness_value
    return float(np.clip(0.5 + 0.5 * true_iou + noise, 0.0, 1.0))


def simulate_detections(gt: list[Box], spec: SceneSpec, seed: int = 0) -> list[Detection]:
    """Noisy duplicate detections around every ground-truth box.

    For each GT box in order: draw the duplicate count uniformly from
    [duplicates_min, duplicates_max], then per duplicate draw six standard
    normals (dx, dy, dw, dh, soft-IoU noise, objectness noise). Centers move
    by ``center_jitter_frac`` times the box size, sizes are scaled by
    ``1 + dim_jitter_frac * N(0, 1)`` (floored at 5% of the original), and
    the soft-IoU is the true IoU with the source box plus ``score_noise``
    noise, clipped to [0, 1].
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    out: list[Detection] = []
    cj, dj = spec.center_jitter_frac, spec.dim_jitter_frac
    for g in gt:
        count = int(rng.integers(spec.duplicates_min, spec.duplicates_max + 1))
        z = rng.standard_normal((count, 6))
        for dx, dy, dw, dh, ns, no in z:
            w = g.w * max(1.0 + dj * dw, 0.05)
            h = g.h * max(1.0 + dj * dh, 0.05)
            box = Box(g.cx + cj * g.w * dx, g.cy + cj * g.h * dy, w, h)
            true_iou = iou(box, g)
            soft = float(np.clip(true_iou + spec.score_noise * ns, 0.0, 1.0))
            obj = _objectness(spec, true_iou, spec.score_noise * no)
            out.append(Detection(box, obj, soft))
    return out
