"""EM merging of overlapping detections.

Each detection becomes a 2D Gaussian weighted by its score. The resulting
mixture is reduced to K Gaussians by hard-assignment EM under the objective

    d(f, g) = sum_i alpha_i * min_j KL(f_i || g_j)

starting from an agglomerative clustering. Overlapping survivors are then
suppressed and each remaining Gaussian is turned back into one box.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .gaussian import VAR_FLOOR, BoxGaussian, kl_matrix, symmetric_kl
from .geometry import Box, centers_to_corners, nms_keep


class NoDetectionsError(ValueError):
    """Raised when nothing survives score filtering."""


class ScoreSource(str, Enum):
    SOFT_IOU = "soft_iou"
    OBJECTNESS = "objectness"


@dataclass(frozen=True)
class Detection:
    box: Box
    objectness: float
    soft_iou: float

    def __post_init__(self) -> None:
        for name in ("objectness", "soft_iou"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    def score(self, source: "ScoreSource | str") -> float:
        return self.soft_iou if ScoreSource(source) is ScoreSource.SOFT_IOU else self.objectness


@dataclass(frozen=True)
class MergeConfig:
    epsilon_em: float = 1e-10
    max_iterations: int = 10
    objectness_floor: float = 0.1
    suppression_iou: float = 0.3
    score_source: ScoreSource = ScoreSource.SOFT_IOU
    k_override: Optional[int] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "score_source", ScoreSource(self.score_source))
        if not self.epsilon_em > 0:
            raise ValueError("epsilon_em must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        for name in ("objectness_floor", "suppression_iou"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.k_override is not None and self.k_override < 1:
            raise ValueError("k_override must be at least 1")


class MergedBox(NamedTuple):
    box: Box
    confidence: float


class Mixture:
    """Weighted set of diagonal Gaussians held as (n, 2) mean/variance arrays."""

    def __init__(self, means, variances, weights) -> None:
        self.means = np.array(means, dtype=np.float64).reshape(-1, 2)
        self.variances = np.array(variances, dtype=np.float64).reshape(-1, 2)
        self.weights = np.array(weights, dtype=np.float64).reshape(-1)
        n = len(self.weights)
        if n == 0 or len(self.means) != n or len(self.variances) != n:
            raise ValueError("mixture needs at least one component and matching array lengths")
        if np.any(self.weights < 0) or not np.all(np.isfinite(self.weights)):
            raise ValueError("mixture weights must be finite and nonnegative")
        if np.any(self.variances <= 0):
            raise ValueError("mixture variances must be positive")

    @classmethod
    def from_components(cls, components: Sequence[BoxGaussian], weights, normalize: bool = True) -> "Mixture":
        weights = np.asarray(weights, dtype=np.float64)
        if normalize:
            weights = weights / weights.sum()
        return cls([c.mu for c in components], [c.var for c in components], weights)

    @property
    def components(self) -> list[BoxGaussian]:
        return [BoxGaussian(tuple(m), tuple(v)) for m, v in zip(self.means, self.variances)]

    def boxes_2sigma(self) -> np.ndarray:
        """Center-form (n, 4) boxes spanning +-2 standard deviations."""
        return np.column_stack([self.means, 4.0 * np.sqrt(self.variances)])

    def __len__(self) -> int:
        return len(self.weights)

    def __repr__(self) -> str:
        return f"Mixture(n={len(self)})"


class EMResult(NamedTuple):
    mixture: Mixture
    assignment: np.ndarray
    trace: list[float]
    stop_reason: str
    iterations: int


def _kept(detections: Sequence[Detection], config: MergeConfig) -> list[Detection]:
    src = config.score_source
    return [
        d for d in detections
        if d.objectness > config.objectness_floor and d.score(src) > 0.0
    ]


def build_mixture(detections: Sequence[Detection], config: MergeConfig = MergeConfig()) -> Mixture:
    """Gaussian per detection, weighted by the configured score.

    Detections with objectness at or below the floor are dropped, as are
    detections whose selected score is zero (they carry no mixture mass).
    """
    kept = _kept(detections, config)
    if not kept:
        raise NoDetectionsError("no detections left after score filtering")
    boxes = np.array([(d.box.cx, d.box.cy, d.box.w, d.box.h) for d in kept])
    scores = np.array([d.score(config.score_source) for d in kept])
    return Mixture(boxes[:, :2], (boxes[:, 2:] / 4.0) ** 2, scores / scores.sum())


def estimate_k(image_w: float, image_h: float, detections: Sequence[Detection]) -> int:
    """Number of non-overlapping mean-sized boxes that fit in the image, clamped to [1, N]."""
    if not detections:
        raise ValueError("estimate_k needs at least one detection")
    mean_w = float(np.mean([d.box.w for d in detections]))
    mean_h = float(np.mean([d.box.h for d in detections]))
    k = int(np.floor(image_w * image_h / (mean_w * mean_h)))
    return min(max(k, 1), len(detections))


def _moment_merge(wa, mua, vara, wb, mub, varb):
    w = wa + wb
    if w > 0:
        ta, tb = wa / w, wb / w
    else:
        ta = tb = 0.5
    # shifted form: exact when both inputs coincide
    mu = mua + tb * (mub - mua)
    var = vara + ta * (mua - mu) ** 2 + tb * (varb - vara + (mub - mu) ** 2)
    return w, mu, var


def init_clusters(mixture: Mixture, k: int) -> Mixture:
    """Agglomerative reduction of ``mixture`` to exactly ``k`` components.

    Repeatedly merges the pair with the smallest symmetrized KL divergence,
    replacing it by its moment-matched Gaussian. Candidate pairs are limited
    to a spatial grid neighbourhood (cell = mean box size); the neighbourhood
    doubles whenever it runs out of pairs before ``k`` is reached.
    Output components are ordered by their lowest original member index.
    """
    n = len(mixture)
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    if k == n:
        return Mixture(mixture.means, mixture.variances, mixture.weights)

    cap = 2 * n - 1
    w = np.zeros(cap)
    mu = np.zeros((cap, 2))
    var = np.ones((cap, 2))
    first = np.zeros(cap, dtype=np.int64)
    alive = np.zeros(cap, dtype=bool)
    w[:n] = mixture.weights
    mu[:n] = mixture.means
    var[:n] = mixture.variances
    first[:n] = np.arange(n)
    alive[:n] = True

    cell = np.maximum(4.0 * np.sqrt(np.maximum(mixture.variances, VAR_FLOOR)).mean(axis=0), 1e-9)
    keys: dict[int, tuple[int, int]] = {}
    grid: dict[tuple[int, int], set[int]] = {}

    def place(i: int) -> None:
        key = (int(np.floor(mu[i, 0] / cell[0])), int(np.floor(mu[i, 1] / cell[1])))
        keys[i] = key
        grid.setdefault(key, set()).add(i)

    def unplace(i: int) -> None:
        members = grid[keys[i]]
        members.discard(i)
        if not members:
            del grid[keys[i]]

    def neighbours(key: tuple[int, int], radius: int) -> list[int]:
        out: list[int] = []
        kx, ky = key
        if (2 * radius + 1) ** 2 > len(grid):
            for (cx, cy), members in grid.items():
                if abs(cx - kx) <= radius and abs(cy - ky) <= radius:
                    out.extend(members)
        else:
            for dx in range(-radius, radius + 1):
                for dy in range(-radius, radius + 1):
                    members = grid.get((kx + dx, ky + dy))
                    if members:
                        out.extend(members)
        return out

    def all_pairs(radius: int) -> list[tuple[float, int, int]]:
        pairs: list[tuple[float, int, int]] = []
        for key, members in grid.items():
            a = np.fromiter(members, dtype=np.int64)
            b = np.asarray(neighbours(key, radius), dtype=np.int64)
            ia, ib = np.meshgrid(a, b, indexing="ij")
            mask = ia < ib
            ia, ib = ia[mask], ib[mask]
            if len(ia) == 0:
                continue
            costs = symmetric_kl(mu[ia], var[ia], mu[ib], var[ib])
            pairs.extend(zip(costs.tolist(), ia.tolist(), ib.tolist()))
        heapq.heapify(pairs)
        return pairs

    for i in range(n):
        place(i)
    radius = 1
    heap = all_pairs(radius)
    n_alive = n
    next_id = n
    while n_alive > k:
        if not heap:
            radius *= 2
            heap = all_pairs(radius)
            continue
        _, a, b = heapq.heappop(heap)
        if not (alive[a] and alive[b]):
            continue
        c = next_id
        next_id += 1
        w[c], mu[c], var[c] = _moment_merge(w[a], mu[a], var[a], w[b], mu[b], var[b])
        first[c] = min(first[a], first[b])
        alive[a] = alive[b] = False
        unplace(a)
        unplace(b)
        alive[c] = True
        place(c)
        n_alive -= 1
        others = np.asarray([j for j in neighbours(keys[c], radius) if j != c], dtype=np.int64)
        if len(others):
            costs = symmetric_kl(mu[c][None, :], var[c][None, :], mu[others], var[others])
            for cost, j in zip(costs.tolist(), others.tolist()):
                heapq.heappush(heap, (cost, j, c))

    ids = np.flatnonzero(alive)
    ids = ids[np.argsort(first[ids], kind="stable")]
    return Mixture(mu[ids], var[ids], w[ids])


def e_step(f: Mixture, g: Mixture) -> np.ndarray:
    """Index of the KL-nearest component of ``g`` for each component of ``f``."""
    return kl_matrix(f.means, f.variances, g.means, g.variances).argmin(axis=1)


def _m_step(f: Mixture, assignment: np.ndarray, k: int) -> tuple[Mixture, np.ndarray]:
    assignment = np.asarray(assignment, dtype=np.int64)
    if len(assignment) != len(f):
        raise ValueError("assignment length must match the mixture size")
    if len(assignment) and (assignment.min() < 0 or assignment.max() >= k):
        raise ValueError(f"assignment indices must lie in [0, {k})")
    alpha = f.weights
    beta = np.bincount(assignment, weights=alpha, minlength=k)
    used = np.flatnonzero(beta > 0)
    remap = np.full(k, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    beta_used = beta[used]

    # sums are taken relative to each cluster's first member so that clusters
    # of identical components reproduce that component exactly
    first = np.full(k, -1, dtype=np.int64)
    first[assignment[::-1]] = np.arange(len(assignment))[::-1]
    ref = first[assignment]
    means = np.empty((len(used), 2))
    variances = np.empty((len(used), 2))
    for axis in range(2):
        mu, var = f.means[:, axis], f.variances[:, axis]
        shift = np.bincount(assignment, weights=alpha * (mu - mu[ref]), minlength=k)[used] / beta_used
        means[:, axis] = mu[first[used]] + shift
        spread = var - var[ref] + (mu - means[remap[assignment], axis]) ** 2
        variances[:, axis] = var[first[used]] + np.bincount(assignment, weights=alpha * spread, minlength=k)[used] / beta_used
    return Mixture(means, variances, beta_used), remap[assignment]


def m_step(f: Mixture, assignment: np.ndarray, k: int) -> Mixture:
    """Moment-matched cluster Gaussians; clusters without mass are dropped."""
    return _m_step(f, assignment, k)[0]


def objective(f: Mixture, g: Mixture) -> float:
    kl = kl_matrix(f.means, f.variances, g.means, g.variances)
    return float(np.dot(f.weights, kl.min(axis=1)))


def em_reduce(f: Mixture, k: int, config: MergeConfig = MergeConfig()) -> EMResult:
    """Reduce ``f`` to at most ``k`` Gaussians.

    Stops when the objective drops below ``epsilon_em``, when the E-step
    reproduces the previous assignment, or after ``max_iterations`` M-steps.
    ``trace[0]`` is the objective of the agglomerative initialization and
    ``trace[t]`` the objective after the t-th M-step.
    """
    g = init_clusters(f, k)
    kl = kl_matrix(f.means, f.variances, g.means, g.variances)
    assign = kl.argmin(axis=1)
    trace = [float(np.dot(f.weights, kl[np.arange(len(f)), assign]))]
    prev: Optional[np.ndarray] = None
    reason = "max_iterations"
    iterations = 0
    while True:
        if prev is not None and np.array_equal(assign, prev):
            reason = "fixed_point"
            break
        if iterations >= config.max_iterations:
            break
        g, prev = _m_step(f, assign, len(g))
        iterations += 1
        kl = kl_matrix(f.means, f.variances, g.means, g.variances)
        assign = kl.argmin(axis=1)
        trace.append(float(np.dot(f.weights, kl[np.arange(len(f)), assign])))
        if trace[-1] < config.epsilon_em:
            reason = "epsilon"
            break
    return EMResult(g, assign, trace, reason, iterations)


def suppress(g: Mixture, iou_threshold: float = 0.3) -> Mixture:
    """Drop Gaussians whose 2-sigma box overlaps a heavier kept one by more than ``iou_threshold``."""
    keep = sorted(nms_keep(centers_to_corners(g.boxes_2sigma()), g.weights, iou_threshold))
    weights = g.weights[keep]
    total = weights.sum()
    if total > 0:
        weights = weights / total
    return Mixture(g.means[keep], g.variances[keep], weights)


def extract_boxes(
    g: Mixture,
    detections: Sequence[Detection],
    score_source: "ScoreSource | str" = ScoreSource.SOFT_IOU,
) -> list[MergedBox]:
    """One box per Gaussian from the detections whose centers lie inside its 2-sigma ellipse.

    The box is centered on the Gaussian mean and takes the median member
    width and height; its confidence is the best member score. A Gaussian
    with no members falls back to its own 2-sigma box and its weight.
    """
    out: list[MergedBox] = []
    if detections:
        dets = np.array([(d.box.cx, d.box.cy, d.box.w, d.box.h) for d in detections])
        scores = np.array([d.score(score_source) for d in detections])
    for j in range(len(g)):
        mu = g.means[j]
        var = np.maximum(g.variances[j], VAR_FLOOR)
        if detections:
            m2 = ((dets[:, :2] - mu) ** 2 / var).sum(axis=1)
            members = np.flatnonzero(m2 <= 4.0)
        else:
            members = np.empty(0, dtype=np.int64)
        if len(members):
            box = Box(float(mu[0]), float(mu[1]),
                      float(np.median(dets[members, 2])), float(np.median(dets[members, 3])))
            out.append(MergedBox(box, float(scores[members].max())))
        else:
            box = Box(float(mu[0]), float(mu[1]), float(4.0 * np.sqrt(var[0])), float(4.0 * np.sqrt(var[1])))
            out.append(MergedBox(box, float(g.weights[j])))
    return out


def merge(
    detections: Sequence[Detection],
    image_w: float,
    image_h: float,
    config: MergeConfig = MergeConfig(),
) -> list[MergedBox]:
    """Full merging pipeline: one box per object out of a cloud of duplicates."""
    kept = [d for d in detections if d.objectness > config.objectness_floor]
    try:
        f = build_mixture(kept, config)
    except NoDetectionsError:
        return []
    weighted = _kept(kept, config)
    if config.k_override is not None:
        k = min(config.k_override, len(f))
    else:
        k = estimate_k(image_w, image_h, weighted)
    result = em_reduce(f, k, config)
    g = suppress(result.mixture, config.suppression_iou)
    return extract_boxes(g, kept, config.score_source)
