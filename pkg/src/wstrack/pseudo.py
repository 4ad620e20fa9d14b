"""Pseudo-labels for the tracking network, and the loss that ignores Γ.

A sample couples the two input frames with a position target at t+1 (one
Gaussian per associated cell), a two-channel displacement target pointing
from each associated t+1 cell back to its partner at t (scaled by
``motion_scale``), and the ignore mask built from the association set's
unassociated cell regions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import InputError
from .heatmap import render_likelihood

__all__ = ["PseudoSample", "LossReport", "build_pseudo_samples", "masked_loss", "masked_loss_torch"]

# motion supervision only where the position target exceeds this
MOTION_SUPPORT = 0.05


@dataclass
class PseudoSample:
    i_t: np.ndarray
    i_t1: np.ndarray
    target_position: np.ndarray
    target_motion: np.ndarray  # (2, H, W): dx, dy
    ignore_mask: np.ndarray  # bool (H, W)
    frame_index: int = 0

    def target_stack(self):
        return np.concatenate([self.target_position[None], self.target_motion]).astype(np.float32)


@dataclass
class LossReport:
    total: float
    per_pixel_masked_fraction: float


def _nearest_index(points, shape):
    """Index of the nearest point and the squared distance to it, per pixel."""
    h, w = shape
    ys = np.arange(h, dtype=np.float64)[:, None]
    xs = np.arange(w, dtype=np.float64)[None, :]
    best = np.full(shape, np.inf)
    idx = np.full(shape, -1, dtype=np.int64)
    for k, (x, y) in enumerate(points):
        d2 = (xs - x) ** 2 + (ys - y) ** 2
        closer = d2 < best
        best[closer] = d2[closer]
        idx[closer] = k
    return idx, best


def build_pseudo_samples(assoc, i_t, i_t1, sigma=6.0, r=18.0, motion_scale=30.0):
    """Turn one filtered association set into a :class:`PseudoSample`.

    Per pixel, the nearest detected t+1 cell owns it (ties: lower index).
    Pixels within ``r`` of an associated owner carry that cell's constant
    displacement and are never ignored; the rest of Γ is ignored.
    """
    i_t = np.asarray(i_t, dtype=np.float64)
    i_t1 = np.asarray(i_t1, dtype=np.float64)
    if i_t.shape != i_t1.shape:
        raise InputError("frames differ in shape")
    if motion_scale <= 0:
        raise InputError("motion_scale must be positive")
    shape = i_t.shape
    cells = list(assoc.positions_t1)
    partner = {p.cell_index: assoc.positions_t[p.detection_index] for p in assoc.pairs}
    matched = sorted(partner)

    position = render_likelihood([cells[i] for i in matched], sigma, shape)
    motion = np.zeros((2,) + shape)
    supervised = np.zeros(shape, dtype=bool)
    if cells:
        owner, d2 = _nearest_index(cells, shape)
        within = d2 <= r * r
        for i in matched:
            region = within & (owner == i)
            (xt, yt), (x1, y1) = partner[i], cells[i]
            motion[0][region] = np.clip((xt - x1) / motion_scale, -1.0, 1.0)
            motion[1][region] = np.clip((yt - y1) / motion_scale, -1.0, 1.0)
            supervised |= region
    gamma = np.asarray(assoc.gamma, dtype=bool)
    if gamma.shape != shape:
        raise InputError("gamma does not match the frame shape")
    ignore = gamma & ~supervised
    return PseudoSample(i_t, i_t1, position, motion, ignore, assoc.frame_index)


def masked_loss(pred_position, pred_motion, sample: PseudoSample):
    """Masked composite loss of one prediction against one pseudo sample.

    Per pixel: squared position error plus, where the position target exceeds
    0.05, the mean squared error of the two motion channels.  Pixels under
    the ignore mask contribute nothing; ``total`` averages over the rest.
    """
    pp = np.asarray(pred_position, dtype=np.float64)
    pm = np.asarray(pred_motion, dtype=np.float64)
    if pp.shape != sample.target_position.shape or pm.shape != sample.target_motion.shape:
        raise InputError("prediction shapes do not match the sample")
    tp = sample.target_position
    w = (tp > MOTION_SUPPORT).astype(np.float64)
    per_pixel = (pp - tp) ** 2 + w * 0.5 * np.sum((pm - sample.target_motion) ** 2, axis=0)
    keep = ~sample.ignore_mask
    n = int(keep.sum())
    frac = 1.0 - n / keep.size
    if n == 0:
        return LossReport(0.0, 1.0)
    return LossReport(float(per_pixel[keep].sum() / n), frac)


def masked_loss_torch(pred, target, ignore):
    """Batched tensor form of :func:`masked_loss`.

    ``pred``/``target``: (B, 3, H, W); ``ignore``: (B, 1, H, W) in {0, 1}.
    The mean runs over every non-ignored pixel of the batch.
    """
    tp = target[:, 0:1]
    w = (tp > MOTION_SUPPORT).to(pred.dtype)
    per_pixel = (pred[:, 0:1] - tp) ** 2 + w * 0.5 * ((pred[:, 1:] - target[:, 1:]) ** 2).sum(dim=1, keepdim=True)
    keep = 1.0 - ignore
    n = keep.sum()
    if n.item() == 0:
        return (per_pixel * keep).sum()
    return (per_pixel * keep).sum() / n
