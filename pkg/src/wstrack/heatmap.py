"""Point labels to Gaussian position-likelihood maps, and quadratic backgrounds."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError

__all__ = ["render_likelihood", "BackgroundModel", "estimate_background", "disk_mask"]


def render_likelihood(positions, sigma, shape):
    """Per-pixel maximum of unit-peak Gaussians centred on ``positions``.

    Parameters
    ----------
    positions : sequence of (x, y)
        Cell centroids in pixel coordinates (x = column, y = row).
    sigma : float
        Gaussian width in pixels.
    shape : (H, W)

    Returns
    -------
    ndarray of float64, values in [0, 1]
    """
    if sigma <= 0:
        raise InputError("sigma must be positive")
    h, w = shape
    out = np.zeros((h, w), dtype=np.float64)
    if len(positions) == 0:
        return out
    pts = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    bad = (pts[:, 0] < 0) | (pts[:, 0] > w - 1) | (pts[:, 1] < 0) | (pts[:, 1] > h - 1)
    if np.any(bad):
        raise InputError(f"position outside image of shape {shape}: {pts[bad][0].tolist()}")
    ys = np.arange(h, dtype=np.float64)[:, None]
    xs = np.arange(w, dtype=np.float64)[None, :]
    # max of exp(-d^2/2s^2) is exp(-min d^2/2s^2); take the min distance first
    d2 = np.full((h, w), np.inf)
    for x, y in pts:
        np.minimum(d2, (xs - x) ** 2 + (ys - y) ** 2, out=d2)
    np.exp(-d2 / (2.0 * sigma**2), out=out)
    return out


def disk_mask(center, radius, shape):
    """Boolean mask of pixels within ``radius`` of ``center`` (x, y)."""
    h, w = shape
    x, y = center
    ys = np.arange(h)[:, None]
    xs = np.arange(w)[None, :]
    return (xs - x) ** 2 + (ys - y) ** 2 <= radius**2


@dataclass(frozen=True)
class BackgroundModel:
    """b(x, y) = a0 + a1 x + a2 y + a3 x^2 + a4 x y + a5 y^2"""

    coefficients: tuple[float, float, float, float, float, float]

    def evaluate(self, shape):
        h, w = shape
        a0, a1, a2, a3, a4, a5 = self.coefficients
        y, x = np.mgrid[0:h, 0:w].astype(np.float64)
        return a0 + a1 * x + a2 * y + a3 * x * x + a4 * x * y + a5 * y * y


def estimate_background(image):
    """Least-squares quadratic surface through every pixel of ``image``."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise InputError("estimate_background expects a nonempty 2-D image")
    h, w = img.shape
    # fit in unit coordinates for conditioning, then map back to pixels
    sx = max(w - 1, 1)
    sy = max(h - 1, 1)
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    u = (x / sx).ravel()
    v = (y / sy).ravel()
    design = np.stack([np.ones_like(u), u, v, u * u, u * v, v * v], axis=1)
    c, *_ = np.linalg.lstsq(design, img.ravel(), rcond=None)
    coef = (
        c[0],
        c[1] / sx,
        c[2] / sy,
        c[3] / sx**2,
        c[4] / (sx * sy),
        c[5] / sy**2,
    )
    return BackgroundModel(tuple(float(a) for a in coef))
