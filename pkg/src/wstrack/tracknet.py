"""Tracking network trained on pseudo-labels, and sequence-level linking.

The network reads (I_t, I_t1) and emits three channels: the position
likelihood at t+1 (logistic) and a scaled displacement field pointing from
each t+1 cell back to its position at t (tanh).
"""
from __future__ import annotations

import logging

import numpy as np
import torch
from torch import nn

from .codetect import DOWNSAMPLING, _check_pair, _param_dtype, detect_peaks
from .errors import InputError, TrainingError
from .layers import ConvUnit, upsample
from .pseudo import masked_loss_torch
from .synthdata import GroundTruthTrack
from .training import TrainConfig, crop_batch, dihedral, dihedral_vectors, seed_everything

log = logging.getLogger(__name__)

__all__ = ["TrackNet", "train_tracknet", "track_forward", "infer_pair", "link_tracks", "track_sequence"]


class TrackNet(nn.Module):
    def __init__(self, width=16):
        super().__init__()
        self.width = width
        w = width
        self.enc0 = nn.Sequential(ConvUnit(2, w), ConvUnit(w, w))
        self.enc1 = nn.Sequential(ConvUnit(w, 2 * w, stride=2), ConvUnit(2 * w, 2 * w))
        self.enc2 = nn.Sequential(ConvUnit(2 * w, 4 * w, stride=2), ConvUnit(4 * w, 4 * w))
        self.enc3 = nn.Sequential(ConvUnit(4 * w, 8 * w, stride=2), ConvUnit(8 * w, 8 * w))
        self.enc4 = nn.Sequential(ConvUnit(8 * w, 8 * w, stride=2), ConvUnit(8 * w, 8 * w))
        self.dec3 = ConvUnit(16 * w, 8 * w)
        self.dec2 = ConvUnit(12 * w, 4 * w)
        self.dec1 = ConvUnit(6 * w, 2 * w)
        self.dec0 = ConvUnit(3 * w, w)
        self.head = nn.Conv2d(w, 3, 1)

    def arch(self):
        return {"type": "TrackNet", "width": self.width}

    def forward(self, i_t, i_t1):
        e0 = self.enc0(torch.cat([i_t, i_t1], dim=1))
        e1 = self.enc1(e0)
        e2 = self.enc2(e1)
        e3 = self.enc3(e2)
        e4 = self.enc4(e3)
        d = self.dec3(torch.cat([upsample(e4), e3], dim=1))
        d = self.dec2(torch.cat([upsample(d), e2], dim=1))
        d = self.dec1(torch.cat([upsample(d), e1], dim=1))
        d = self.dec0(torch.cat([upsample(d), e0], dim=1))
        out = self.head(d)
        return torch.cat([torch.sigmoid(out[:, :1]), torch.tanh(out[:, 1:])], dim=1)


def _stack(samples):
    imgs = np.stack([np.stack([s.i_t, s.i_t1]) for s in samples]).astype(np.float32)
    targets = np.stack([s.target_stack() for s in samples])
    ignore = np.stack([s.ignore_mask[None] for s in samples]).astype(np.float32)
    return imgs, targets, ignore


def _augment(x, y, m, k):
    x, y, m = dihedral(x, k), dihedral(y, k), dihedral(m, k)
    vx, vy = dihedral_vectors(y[1], y[2], k)
    y = np.stack([y[0], vx, vy])
    return x, y, m


def _full_loss(net, imgs, targets, ignore):
    net.eval()
    total = 0.0
    with torch.no_grad():
        for x, y, m in zip(imgs, targets, ignore):
            x = torch.from_numpy(x)[None]
            pred = net(x[:, 0:1], x[:, 1:2])
            total += masked_loss_torch(pred, torch.from_numpy(y)[None], torch.from_numpy(m)[None]).item()
    return total / len(imgs)


def train_tracknet(samples, cfg: TrainConfig | None = None, width=16, net=None):
    """Fit a :class:`TrackNet` to pseudo samples with the masked loss.

    The returned network carries ``history``, ``initial_loss`` and
    ``final_loss`` (mean masked loss over the un-augmented samples).
    """
    cfg = cfg or TrainConfig()
    cfg.validate()
    if len(samples) == 0:
        raise InputError("train_tracknet needs at least one pseudo sample")
    for s in samples:
        _check_pair(s.i_t, s.i_t1)
    rng = seed_everything(cfg.seed)
    imgs, targets, ignore = _stack(samples)
    if net is None:
        net = TrackNet(width)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate)
    initial = _full_loss(net, imgs, targets, ignore)
    history = []
    n = len(imgs)
    for epoch in range(cfg.epochs):
        net.train()
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            xs, ys, ms = [], [], []
            for k in order[start : start + cfg.batch_size]:
                x, y, m = imgs[k], targets[k], ignore[k]
                if cfg.augment:
                    x, y, m = _augment(x, y, m, int(rng.integers(0, 8)))
                x, y, m = crop_batch([x, y, m], cfg.crop_size, rng)
                xs.append(x)
                ys.append(y)
                ms.append(m)
            x = torch.from_numpy(np.stack(xs))
            pred = net(x[:, 0:1], x[:, 1:2])
            loss = masked_loss_torch(pred, torch.from_numpy(np.stack(ys)), torch.from_numpy(np.stack(ms)))
            if not torch.isfinite(loss):
                raise TrainingError("tracking loss became non-finite", epoch)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        history.append(float(np.mean(losses)))
        log.debug("tracknet epoch %d loss %.5f", epoch, history[-1])
    net.eval()
    net.history = history
    net.initial_loss = initial
    net.final_loss = _full_loss(net, imgs, targets, ignore)
    return net


def track_forward(net, i_t, i_t1):
    """(3, H, W) float64 output: position, dx, dy (displacement still scaled)."""
    a, b = _check_pair(i_t, i_t1)
    dt = _param_dtype(net)
    net.eval()
    with torch.no_grad():
        out = net(torch.as_tensor(a, dtype=dt)[None, None], torch.as_tensor(b, dtype=dt)[None, None])
    return out[0].double().numpy()


def infer_pair(net, i_t, i_t1, peak_threshold=0.3, min_distance=6.0, motion_scale=30.0):
    """Detections at t+1 with their predicted source positions at t.

    Returns a list of ``((x_t1, y_t1), (x_t, y_t))``; the displacement is the
    3x3-patch mean of the motion channels at each peak, times ``motion_scale``.
    """
    out = track_forward(net, i_t, i_t1)
    h, w = out.shape[1:]
    result = []
    for x, y in detect_peaks(out[0], peak_threshold, min_distance):
        xi, yi = int(x), int(y)
        ys = slice(max(yi - 1, 0), min(yi + 2, h))
        xs = slice(max(xi - 1, 0), min(xi + 2, w))
        dx = float(out[1, ys, xs].mean()) * motion_scale
        dy = float(out[2, ys, xs].mean()) * motion_scale
        result.append(((x, y), (x + dx, y + dy)))
    return result


def link_tracks(initial_positions, pairwise, gate_radius=18.0, first_frame=0):
    """Fold per-pair predictions into tracks.

    ``pairwise[k]`` holds the :func:`infer_pair` output for frames
    ``first_frame + k -> first_frame + k + 1``.  Each detection claims the
    live track whose last position is nearest its predicted source position
    (within ``gate_radius``); claims are granted one-to-one by ascending
    distance.  A detection left over whose nearest track was granted to
    exactly one other detection turns that track into a division: the track
    ends and both detections start child tracks.  Everything else starts a
    new parentless track.
    """
    tracks: dict[int, GroundTruthTrack] = {}
    next_id = 1
    live = {}  # track_id -> (x, y) at the current frame
    for x, y in initial_positions:
        tracks[next_id] = GroundTruthTrack(next_id, None, [(first_frame, float(x), float(y))])
        live[next_id] = (float(x), float(y))
        next_id += 1

    for k, detections in enumerate(pairwise):
        frame = first_frame + k + 1
        ids = list(live)
        cand = []
        nearest = {}
        for j, (_, (px, py)) in enumerate(detections):
            best = None
            for tid in ids:
                lx, ly = live[tid]
                d = float(np.hypot(px - lx, py - ly))
                if d <= gate_radius:
                    cand.append((d, j, tid))
                    if best is None or d < best[0]:
                        best = (d, tid)
            nearest[j] = best
        cand.sort()
        det_to_track, track_to_det = {}, {}
        for d, j, tid in cand:
            if j not in det_to_track and tid not in track_to_det:
                det_to_track[j] = tid
                track_to_det[tid] = j
        leftovers = sorted(
            (nearest[j][0], j) for j in range(len(detections)) if j not in det_to_track and nearest[j] is not None
        )
        divided = {}
        for _, j in leftovers:
            tid = nearest[j][1]
            if tid in track_to_det and tid not in divided:
                divided[tid] = (track_to_det[tid], j)
        new_live = {}
        assigned_child = set()
        for tid, pair in divided.items():
            for j in pair:
                (x, y), _ = detections[j]
                cid = next_id
                next_id += 1
                tracks[cid] = GroundTruthTrack(cid, tid, [(frame, float(x), float(y))])
                new_live[cid] = (float(x), float(y))
                assigned_child.add(j)
        for j, ((x, y), _) in enumerate(detections):
            if j in assigned_child:
                continue
            tid = det_to_track.get(j)
            if tid is None:
                tid = next_id
                next_id += 1
                tracks[tid] = GroundTruthTrack(tid, None, [])
            tracks[tid].points.append((frame, float(x), float(y)))
            new_live[tid] = (float(x), float(y))
        live = new_live
    return [tracks[k] for k in sorted(tracks)]


def track_sequence(net, frames, peak_threshold=0.3, min_distance=6.0, motion_scale=30.0, gate_radius=18.0):
    """Track every cell through ``frames`` (a list of images).

    First-frame cells are the position-channel peaks for the reversed pair
    (frame 1, frame 0).
    """
    if len(frames) < 2:
        raise InputError("tracking needs at least two frames")
    for f in frames:
        if f.shape[0] % DOWNSAMPLING or f.shape[1] % DOWNSAMPLING:
            raise InputError(f"frame sides must be multiples of {DOWNSAMPLING}")
    first = track_forward(net, frames[1], frames[0])[0]
    initial = detect_peaks(first, peak_threshold, min_distance)
    pairwise = [
        infer_pair(net, frames[t], frames[t + 1], peak_threshold, min_distance, motion_scale)
        for t in range(len(frames) - 1)
    ]
    return link_tracks(initial, pairwise, gate_radius)
