"""Backward-and-forward propagation: mining frame-to-frame associations out
of a trained co-detection network.

For every cell detected at t+1 the network output is cut down to that cell's
disk and pushed back through the network with guided backpropagation.  The
per-cell relevance maps compete pixel-wise (maximum projection), the winners
select which image pixels survive in a pair of masked inputs, and a forward
pass on those inputs shows where the network puts the same cell at t.  The
re-inferred maps are matched one-to-one to the detections at t and weak
responses are dropped into the ignore region.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment

from .codetect import _check_pair, _param_dtype, codetect_forward, detect_peaks
from .errors import ConfigError, InputError
from .heatmap import BackgroundModel, disk_mask, estimate_background, render_likelihood
from .layers import guided_mode

__all__ = [
    "BFPropConfig",
    "TargetRegion",
    "RelevancePair",
    "MaskedImagePair",
    "Association",
    "AssociationSet",
    "init_target_map",
    "guided_backprop",
    "guided_backprop_batch",
    "max_projection",
    "make_masked_images",
    "forward_propagate",
    "solve_assignment",
    "match_one_by_one",
    "filter_low_confidence",
    "mine_associations",
    "associations_to_tracks",
]


@dataclass
class BFPropConfig:
    th: float = 0.01
    th_conf: float = 0.5
    r: float = 18.0
    sigma: float = 6.0
    peak_threshold: float = 0.3
    min_distance: float = 6.0
    # "cell" rescales each cell's relevance pair to unit max before projection
    relevance_norm: str = "none"
    batch_size: int = 16

    def validate(self):
        if not self.th > 0:
            raise ConfigError("th must be > 0")
        if not 0 < self.th_conf < 1:
            raise ConfigError("th_conf must lie in (0, 1)")
        if self.r < 0 or self.sigma <= 0:
            raise ConfigError("r must be >= 0 and sigma > 0")
        if not 0 < self.peak_threshold < 1:
            raise ConfigError("peak_threshold must lie in (0, 1)")
        if self.relevance_norm not in ("cell", "none"):
            raise ConfigError(f"unknown relevance_norm {self.relevance_norm!r}")


@dataclass
class TargetRegion:
    cell_index: int
    center: tuple[float, float]
    radius: float
    shape: tuple[int, int]

    @property
    def pixel_set(self):
        return disk_mask(self.center, self.radius, self.shape)


@dataclass
class RelevancePair:
    cell_index: int
    g_t: np.ndarray
    g_t1: np.ndarray


@dataclass
class MaskedImagePair:
    cell_index: int
    i_t: np.ndarray
    i_t1: np.ndarray


@dataclass
class Association:
    cell_index: int
    detection_index: int
    cost: float
    confidence: float


@dataclass
class AssociationSet:
    """Matched (cell at t+1 -> detection at t) pairs of one frame pair.

    ``gamma`` is a boolean mask over frame t+1 marking the ignore region.
    """

    pairs: list[Association]
    gamma: np.ndarray
    frame_index: int = 0
    stride: int = 1
    positions_t: list = field(default_factory=list)
    positions_t1: list = field(default_factory=list)
    n_cells: int = 0

    def matched_cells(self):
        return {p.cell_index for p in self.pairs}


def _inside(cell, shape):
    x, y = cell
    h, w = shape
    return 0 <= x <= w - 1 and 0 <= y <= h - 1


def init_target_map(l_t1, cell, r):
    """Keep ``l_t1`` inside the radius-``r`` disk around ``cell``, zero elsewhere."""
    l_t1 = np.asarray(l_t1, dtype=np.float64)
    if not _inside(cell, l_t1.shape):
        raise InputError(f"cell {cell} lies outside the map of shape {l_t1.shape}")
    return np.where(disk_mask(cell, r, l_t1.shape), l_t1, 0.0)


def guided_backprop_batch(net, i_t, i_t1, targets):
    """Guided-backprop relevance for a stack of t+1 output targets.

    ``targets`` has shape (N, H, W); returns ``(g_t, g_t1)`` each (N, H, W).
    Each target acts as the output-side gradient of the t+1 likelihood map;
    the signal reaches both input frames through the common network and the
    shared encoder.
    """
    a, b = _check_pair(i_t, i_t1)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim != 3 or targets.shape[1:] != a.shape:
        raise InputError(f"targets must be (N, {a.shape[0]}, {a.shape[1]}), got {targets.shape}")
    n = len(targets)
    dt = _param_dtype(net)
    x_t = torch.as_tensor(a, dtype=dt).expand(n, 1, *a.shape).clone().requires_grad_(True)
    x_t1 = torch.as_tensor(b, dtype=dt).expand(n, 1, *b.shape).clone().requires_grad_(True)
    net.eval()
    with guided_mode(net), torch.enable_grad():
        _, l_t1 = net(x_t, x_t1)
        l_t1.backward(torch.as_tensor(targets, dtype=dt)[:, None])
    return x_t.grad[:, 0].double().numpy(), x_t1.grad[:, 0].double().numpy()


def guided_backprop(net, i_t, i_t1, target, cell_index=0):
    """Raw relevance pair for one target map (see :func:`guided_backprop_batch`)."""
    g_t, g_t1 = guided_backprop_batch(net, i_t, i_t1, np.asarray(target)[None])
    return RelevancePair(cell_index, g_t[0], g_t1[0])


def max_projection(raw):
    """Credit each pixel to the single cell with the largest relevance.

    Negative relevance is clamped to zero first; ties go to the lowest cell
    index.  Applied independently to the t and t+1 maps.
    """
    if len(raw) == 0:
        raise InputError("max_projection needs at least one relevance pair")
    out = [RelevancePair(rp.cell_index, None, None) for rp in raw]
    for attr in ("g_t", "g_t1"):
        stack = np.clip(np.stack([getattr(rp, attr) for rp in raw]), 0.0, None)
        winner = np.argmax(stack, axis=0)
        for i, rp in enumerate(out):
            setattr(rp, attr, np.where(winner == i, stack[i], 0.0))
    return out


def make_masked_images(i_t, i_t1, gpair, bg_t: BackgroundModel, bg_t1: BackgroundModel, th=0.01):
    """Original pixels where projected relevance exceeds ``th``, background elsewhere."""
    a = np.asarray(i_t, dtype=np.float64)
    b = np.asarray(i_t1, dtype=np.float64)
    m_t = np.where(gpair.g_t > th, a, bg_t.evaluate(a.shape))
    m_t1 = np.where(gpair.g_t1 > th, b, bg_t1.evaluate(b.shape))
    return MaskedImagePair(gpair.cell_index, m_t, m_t1)


def forward_propagate(net, masked):
    """t-side likelihood map of the network run on a masked pair (or a list)."""
    if isinstance(masked, MaskedImagePair):
        return codetect_forward(net, masked.i_t, masked.i_t1)[0]
    if not masked:
        return []
    for m in masked:
        _check_pair(m.i_t, m.i_t1)
    dt = _param_dtype(net)
    x_t = torch.as_tensor(np.stack([m.i_t for m in masked]), dtype=dt)[:, None]
    x_t1 = torch.as_tensor(np.stack([m.i_t1 for m in masked]), dtype=dt)[:, None]
    net.eval()
    with torch.no_grad():
        l_t, _ = net(x_t, x_t1)
    return list(l_t[:, 0].double().numpy())


def solve_assignment(cost, unmatched_row_cost=None, unmatched_col_cost=None):
    """Minimum-cost one-to-one assignment.

    Without unmatched costs this is the classic rectangular problem:
    ``min(n, m)`` pairs are formed.  With them, any row or column may stay
    unmatched at its own price, and only pairs cheaper than leaving both ends
    unmatched are worth making.

    Returns
    -------
    pairs : list of (row, col), sorted by row
    total : float, pair costs by row, then unmatched rows, then unmatched
        columns, accumulated in that order
    """
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    if unmatched_row_cost is None and unmatched_col_cost is None:
        rows, cols = linear_sum_assignment(cost)
        pairs = sorted(zip(rows.tolist(), cols.tolist()))
        return pairs, float(sum(cost[i, j] for i, j in pairs))
    ur = np.zeros(n) if unmatched_row_cost is None else np.asarray(unmatched_row_cost, dtype=np.float64)
    uc = np.zeros(m) if unmatched_col_cost is None else np.asarray(unmatched_col_cost, dtype=np.float64)
    # rows: n real + m dummy; cols: m real + n dummy
    big = np.full((n + m, m + n), np.inf)
    big[:n, :m] = cost
    big[np.arange(n), m + np.arange(n)] = ur
    big[n + np.arange(m), np.arange(m)] = uc
    big[n:, m:] = 0.0
    rows, cols = linear_sum_assignment(big)
    pairs = sorted((int(i), int(j)) for i, j in zip(rows, cols) if i < n and j < m)
    matched_r = {i for i, _ in pairs}
    matched_c = {j for _, j in pairs}
    # one running sum in a fixed order, so equal assignments give equal totals
    total = 0.0
    for i, j in pairs:
        total += cost[i, j]
    for i in range(n):
        if i not in matched_r:
            total += ur[i]
    for j in range(m):
        if j not in matched_c:
            total += uc[j]
    return pairs, float(total)


def match_one_by_one(responses, detections_t, sigma, r, shape=None, frame_index=0):
    """Assign each cell's re-inferred map to at most one detection at t.

    cost(i, j): mean squared difference between response ``i`` and the unit
    Gaussian of detection ``j``, over the radius-``r`` disk around ``j``.
    Leaving detection ``j`` unmatched costs the same quantity for an all-zero
    response; leaving a cell unmatched costs nothing.  confidence(i, j) is the
    largest response value inside that disk.
    """
    if len(responses) == 0 and len(detections_t) > 0 and shape is None:
        raise InputError("responses are empty; pass shape explicitly")
    if shape is None:
        shape = np.asarray(responses[0]).shape
    n, m = len(responses), len(detections_t)
    cost = np.zeros((n, m))
    conf = np.zeros((n, m))
    empty_cost = np.zeros(m)
    for j, det in enumerate(detections_t):
        window = disk_mask(det, r, shape)
        g = render_likelihood([det], sigma, shape)[window]
        empty_cost[j] = np.mean(g**2)
        for i, resp in enumerate(responses):
            vals = np.asarray(resp)[window]
            cost[i, j] = np.mean((vals - g) ** 2)
            conf[i, j] = vals.max()
    pairs, _ = solve_assignment(cost, unmatched_col_cost=empty_cost)
    assoc = [Association(i, j, float(cost[i, j]), float(conf[i, j])) for i, j in pairs]
    return AssociationSet(
        pairs=assoc,
        gamma=np.zeros(shape, dtype=bool),
        frame_index=frame_index,
        positions_t=list(detections_t),
        n_cells=n,
    )


def filter_low_confidence(assoc: AssociationSet, th_conf, regions):
    """Drop pairs with confidence below ``th_conf``; their cells, and cells
    never matched, contribute their target regions to ``gamma``."""
    kept = [p for p in assoc.pairs if p.confidence >= th_conf]
    matched = {p.cell_index for p in kept}
    gamma = np.zeros(assoc.gamma.shape, dtype=bool)
    for reg in regions:
        if reg.cell_index not in matched:
            gamma |= reg.pixel_set
    return AssociationSet(
        pairs=kept,
        gamma=gamma,
        frame_index=assoc.frame_index,
        stride=assoc.stride,
        positions_t=assoc.positions_t,
        positions_t1=assoc.positions_t1,
        n_cells=assoc.n_cells,
    )


def _normalise(raw):
    out = []
    for rp in raw:
        scale = max(np.max(rp.g_t), np.max(rp.g_t1))
        if scale > 0:
            out.append(RelevancePair(rp.cell_index, rp.g_t / scale, rp.g_t1 / scale))
        else:
            out.append(rp)
    return out


def mine_associations(net, i_t, i_t1, cfg: BFPropConfig | None = None, frame_index=0, stride=1, details=None):
    """Full backward-and-forward propagation on one frame pair.

    If ``details`` is a dict it receives the intermediate products
    (likelihood maps, regions, relevance, masked pairs, responses).
    """
    cfg = cfg or BFPropConfig()
    cfg.validate()
    a, b = _check_pair(i_t, i_t1)
    shape = a.shape
    l_t, l_t1 = codetect_forward(net, a, b)
    det_t = detect_peaks(l_t, cfg.peak_threshold, cfg.min_distance)
    det_t1 = detect_peaks(l_t1, cfg.peak_threshold, cfg.min_distance)
    regions = [TargetRegion(i, c, cfg.r, shape) for i, c in enumerate(det_t1)]
    if not det_t1:
        out = AssociationSet([], np.zeros(shape, dtype=bool), frame_index, stride, det_t, det_t1, 0)
        if details is not None:
            details.update(l_t=l_t, l_t1=l_t1, regions=regions)
        return out

    raw = []
    for start in range(0, len(det_t1), cfg.batch_size):
        chunk = det_t1[start : start + cfg.batch_size]
        targets = np.stack([init_target_map(l_t1, c, cfg.r) for c in chunk])
        g_t, g_t1 = guided_backprop_batch(net, a, b, targets)
        raw += [RelevancePair(start + k, g_t[k], g_t1[k]) for k in range(len(chunk))]
    if cfg.relevance_norm == "cell":
        raw = _normalise(raw)
    projected = max_projection(raw)

    bg_t, bg_t1 = estimate_background(a), estimate_background(b)
    masked = [make_masked_images(a, b, gp, bg_t, bg_t1, cfg.th) for gp in projected]
    responses = []
    for start in range(0, len(masked), cfg.batch_size):
        responses += forward_propagate(net, masked[start : start + cfg.batch_size])

    assoc = match_one_by_one(responses, det_t, cfg.sigma, cfg.r, shape=shape, frame_index=frame_index)
    assoc.positions_t1 = list(det_t1)
    assoc.stride = stride
    result = filter_low_confidence(assoc, cfg.th_conf, regions)
    if details is not None:
        details.update(
            l_t=l_t,
            l_t1=l_t1,
            regions=regions,
            raw=raw,
            projected=projected,
            masked=masked,
            responses=responses,
            unfiltered=assoc,
        )
    return result


def associations_to_tracks(assoc_sets, snap_radius=4.0):
    """Chain stride-1 association sets into tracks.

    Points of the first frame come from the first set's t detections; each
    set contributes its t+1 cells.  A t detection is identified with the
    nearest point already placed on frame t (within ``snap_radius``); a
    matched t+1 cell continues that point's track and every other cell opens
    a new, parentless track.
    """
    from .synthdata import GroundTruthTrack

    if not assoc_sets:
        return []
    tracks: dict[int, GroundTruthTrack] = {}
    next_id = 1
    first = assoc_sets[0].frame_index
    current = []  # (x, y, track_id) on the latest frame
    for x, y in assoc_sets[0].positions_t:
        tracks[next_id] = GroundTruthTrack(next_id, None, [(first, float(x), float(y))])
        current.append((x, y, next_id))
        next_id += 1
    for aset in assoc_sets:
        frame = aset.frame_index + aset.stride
        det_track = {}
        for j, (x, y) in enumerate(aset.positions_t):
            best, best_d = None, snap_radius
            for cx, cy, tid in current:
                d = float(np.hypot(cx - x, cy - y))
                if d <= best_d:
                    best, best_d = tid, d
            det_track[j] = best
        cell_track = {}
        used = set()
        for pr in sorted(aset.pairs, key=lambda p: (p.cost, p.cell_index)):
            tid = det_track.get(pr.detection_index)
            if tid is not None and tid not in used:
                cell_track[pr.cell_index] = tid
                used.add(tid)
        new_current = []
        for i, (x, y) in enumerate(aset.positions_t1):
            tid = cell_track.get(i)
            if tid is None:
                tid = next_id
                tracks[tid] = GroundTruthTrack(tid, None, [])
                next_id += 1
            tracks[tid].points.append((frame, float(x), float(y)))
            new_current.append((x, y, tid))
        current = new_current
    return [tracks[k] for k in sorted(tracks)]
