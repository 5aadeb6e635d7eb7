"""Diagonal 2D Gaussians standing in for boxes, and their KL divergence.

A box with center (cx, cy) and size (w, h) maps to a Gaussian with mean
(cx, cy) and per-axis standard deviation (w/4, h/4), so the box edges sit at
two standard deviations from the center.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Box

VAR_FLOOR = 1e-6


@dataclass(frozen=True)
class BoxGaussian:
    mu: tuple[float, float]
    var: tuple[float, float]

    def __post_init__(self) -> None:
        object.__setattr__(self, "mu", (float(self.mu[0]), float(self.mu[1])))
        object.__setattr__(self, "var", (float(self.var[0]), float(self.var[1])))
        if not all(np.isfinite(v) and v > 0 for v in self.var):
            raise ValueError(f"variances must be positive and finite, got {self.var}")
        if not all(np.isfinite(m) for m in self.mu):
            raise ValueError(f"mean must be finite, got {self.mu}")


def box_to_gaussian(b: Box) -> BoxGaussian:
    return BoxGaussian((b.cx, b.cy), ((b.w / 4.0) ** 2, (b.h / 4.0) ** 2))


def gaussian_to_box(g: BoxGaussian) -> Box:
    """Box spanning two standard deviations either side of the mean."""
    return Box(g.mu[0], g.mu[1], 4.0 * np.sqrt(g.var[0]), 4.0 * np.sqrt(g.var[1]))


def kl_divergence(f: BoxGaussian, g: BoxGaussian) -> float:
    """Closed-form KL(f || g) for diagonal Gaussians."""
    total = 0.0
    for axis in range(2):
        vf = max(f.var[axis], VAR_FLOOR)
        vg = max(g.var[axis], VAR_FLOOR)
        d = g.mu[axis] - f.mu[axis]
        total += 0.5 * (vf / vg + d * d / vg - 1.0 + np.log(vg / vf))
    return float(total)


def mahalanobis_sq(g: BoxGaussian, p) -> float:
    dx = float(p[0]) - g.mu[0]
    dy = float(p[1]) - g.mu[1]
    return dx * dx / max(g.var[0], VAR_FLOOR) + dy * dy / max(g.var[1], VAR_FLOOR)


# Array versions used by the merger. Means and variances are (n, 2) arrays.


def kl_matrix(mu_f: np.ndarray, var_f: np.ndarray, mu_g: np.ndarray, var_g: np.ndarray) -> np.ndarray:
    """KL(f_i || g_j) for every pair, shape (len(f), len(g))."""
    vf = np.maximum(var_f, VAR_FLOOR)
    vg = np.maximum(var_g, VAR_FLOOR)
    inv_g = 1.0 / vg
    out = np.zeros((vf.shape[0], vg.shape[0]))
    for axis in range(2):
        d = mu_g[None, :, axis] - mu_f[:, None, axis]
        ratio = vf[:, None, axis] * inv_g[None, :, axis]
        out += ratio + d * d * inv_g[None, :, axis] - 1.0 - np.log(ratio)
    out *= 0.5
    # roundoff can leave tiny negatives on identical pairs
    np.maximum(out, 0.0, out=out)
    return out


def symmetric_kl(mu_a: np.ndarray, var_a: np.ndarray, mu_b: np.ndarray, var_b: np.ndarray) -> np.ndarray:
    """KL(a||b) + KL(b||a), broadcasting row-wise over (n, 2) inputs."""
    va = np.maximum(var_a, VAR_FLOOR)
    vb = np.maximum(var_b, VAR_FLOOR)
    d2 = (mu_a - mu_b) ** 2
    terms = va / vb + vb / va - 2.0 + d2 * (1.0 / va + 1.0 / vb)
    return 0.5 * terms.sum(axis=-1)
