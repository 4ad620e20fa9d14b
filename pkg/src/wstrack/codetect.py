"""Co-detection network: joint likelihood maps for two successive frames.

Layout: one input-encoder applied to both frames (same module, hence shared
weights), channel concatenation, a three-level U-Net "common network", and
two output-decoders that each take skip features from the encoder pass of
their own frame.  Total downsampling is 16, so frame sides must be multiples
of 16.
"""
from __future__ import annotations

import logging

import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage
from torch import nn

from .errors import InputError, TrainingError
from .heatmap import render_likelihood
from .layers import ConvUnit, upsample
from .training import TrainConfig, crop_batch, dihedral, seed_everything

log = logging.getLogger(__name__)

__all__ = [
    "CoDetectNet",
    "codetect_forward",
    "codetect_loss",
    "train_codetect",
    "detect_peaks",
]

DOWNSAMPLING = 16


class InputEncoder(nn.Module):
    def __init__(self, width):
        super().__init__()
        w = width
        self.stem = ConvUnit(1, w)
        self.down1 = nn.Sequential(ConvUnit(w, 2 * w, stride=2), ConvUnit(2 * w, 2 * w))
        self.down2 = nn.Sequential(ConvUnit(2 * w, 4 * w, stride=2), ConvUnit(4 * w, 4 * w))

    def forward(self, x):
        s0 = self.stem(x)
        s1 = self.down1(s0)
        s2 = self.down2(s1)
        return s0, s1, s2


class CommonNetwork(nn.Module):
    """Three-level encoder-decoder working at 1/4 resolution."""

    def __init__(self, width):
        super().__init__()
        w = width
        self.enc0 = nn.Sequential(ConvUnit(8 * w, 4 * w), ConvUnit(4 * w, 4 * w))
        self.enc1 = nn.Sequential(ConvUnit(4 * w, 8 * w, stride=2), ConvUnit(8 * w, 8 * w))
        self.enc2 = nn.Sequential(ConvUnit(8 * w, 8 * w, stride=2), ConvUnit(8 * w, 8 * w))
        self.dec1 = ConvUnit(16 * w, 8 * w)
        self.dec0 = ConvUnit(12 * w, 4 * w)

    def forward(self, x):
        e0 = self.enc0(x)
        e1 = self.enc1(e0)
        e2 = self.enc2(e1)
        d1 = self.dec1(torch.cat([upsample(e2), e1], dim=1))
        return self.dec0(torch.cat([upsample(d1), e0], dim=1))


class OutputDecoder(nn.Module):
    def __init__(self, width):
        super().__init__()
        w = width
        self.up1 = ConvUnit(4 * w + 2 * w, 2 * w)
        self.up0 = ConvUnit(2 * w + w, w)
        self.head = nn.Conv2d(w, 1, 1)

    def forward(self, x, skips):
        s0, s1, _ = skips
        x = self.up1(torch.cat([upsample(x), s1], dim=1))
        x = self.up0(torch.cat([upsample(x), s0], dim=1))
        return torch.sigmoid(self.head(x))


class CoDetectNet(nn.Module):
    def __init__(self, width=16):
        super().__init__()
        self.width = width
        self.encoder = InputEncoder(width)
        self.common = CommonNetwork(width)
        self.decoder_t = OutputDecoder(width)
        self.decoder_t1 = OutputDecoder(width)

    def arch(self):
        return {"type": "CoDetectNet", "width": self.width}

    def forward(self, i_t, i_t1):
        """``i_t``, ``i_t1``: (B, 1, H, W) -> two (B, 1, H, W) maps in (0, 1)."""
        skips_t = self.encoder(i_t)
        skips_t1 = self.encoder(i_t1)
        z = self.common(torch.cat([skips_t[2], skips_t1[2]], dim=1))
        return self.decoder_t(z, skips_t), self.decoder_t1(z, skips_t1)


def _check_pair(i_t, i_t1):
    a = np.asarray(i_t)
    b = np.asarray(i_t1)
    if a.shape != b.shape or a.ndim != 2:
        raise InputError(f"frames must be equal-shaped 2-D images, got {a.shape} and {b.shape}")
    h, w = a.shape
    if h % DOWNSAMPLING or w % DOWNSAMPLING:
        raise InputError(f"frame sides must be multiples of {DOWNSAMPLING}, got {a.shape}")
    return a, b


def _param_dtype(net):
    return next(net.parameters()).dtype


def to_tensor(img, dtype=torch.float32):
    return torch.as_tensor(np.asarray(img), dtype=dtype)[None, None]


def codetect_forward(net, i_t, i_t1):
    """Likelihood maps (L_t, L_t1) as float64 arrays."""
    a, b = _check_pair(i_t, i_t1)
    dt = _param_dtype(net)
    net.eval()
    with torch.no_grad():
        l_t, l_t1 = net(to_tensor(a, dt), to_tensor(b, dt))
    return l_t[0, 0].double().numpy(), l_t1[0, 0].double().numpy()


def codetect_loss(l_t, l_t1, lhat_t, lhat_t1):
    """Sum over the two frames of the pixel-mean squared error.

    Works on numpy arrays or torch tensors; tensors keep the autograd graph.
    For batched tensors the per-frame means are taken over all elements.
    """
    shapes = {tuple(x.shape) for x in (l_t, l_t1, lhat_t, lhat_t1)}
    if len(shapes) != 1:
        raise InputError(f"likelihood maps differ in shape: {sorted(shapes)}")
    if isinstance(l_t, torch.Tensor):
        return F.mse_loss(l_t, lhat_t) + F.mse_loss(l_t1, lhat_t1)
    l_t, l_t1, lhat_t, lhat_t1 = (np.asarray(x, dtype=np.float64) for x in (l_t, l_t1, lhat_t, lhat_t1))
    return float(np.mean((l_t - lhat_t) ** 2) + np.mean((l_t1 - lhat_t1) ** 2))


def _stack_targets(dataset, sigma):
    imgs, maps = [], []
    for i_t, i_t1, p_t, p_t1 in dataset:
        a, b = _check_pair(i_t, i_t1)
        imgs.append(np.stack([a, b]))
        maps.append(np.stack([render_likelihood(p_t, sigma, a.shape), render_likelihood(p_t1, sigma, a.shape)]))
    return np.stack(imgs).astype(np.float32), np.stack(maps).astype(np.float32)


def _full_loss(net, imgs, maps):
    net.eval()
    with torch.no_grad():
        total = 0.0
        for x, y in zip(imgs, maps):
            x = torch.from_numpy(x)[:, None]
            y = torch.from_numpy(y)[:, None]
            l_t, l_t1 = net(x[0:1], x[1:2])
            total += float(codetect_loss(l_t, l_t1, y[0:1], y[1:2]))
    return total / len(imgs)


def train_codetect(dataset, cfg: TrainConfig | None = None, width=16, net=None):
    """Fit a :class:`CoDetectNet` to point-labelled frame pairs.

    ``dataset`` is a list of ``(I_t, I_t1, points_t, points_t1)``.  The
    returned network carries ``history`` (per-epoch mean batch loss) and
    ``initial_loss`` / ``final_loss`` measured on the whole, un-augmented
    training set.
    """
    cfg = cfg or TrainConfig()
    cfg.validate()
    if len(dataset) == 0:
        raise InputError("train_codetect needs a nonempty dataset")
    rng = seed_everything(cfg.seed)
    imgs, maps = _stack_targets(dataset, cfg.sigma)
    if net is None:
        net = CoDetectNet(width)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate)
    initial = _full_loss(net, imgs, maps)
    history = []
    n = len(imgs)
    for epoch in range(cfg.epochs):
        net.train()
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            xs, ys = [], []
            for k in order[start : start + cfg.batch_size]:
                x, y = imgs[k], maps[k]
                if cfg.augment:
                    d = int(rng.integers(0, 8))
                    x, y = dihedral(x, d), dihedral(y, d)
                x, y = crop_batch([x, y], cfg.crop_size, rng)
                xs.append(x)
                ys.append(y)
            x = torch.from_numpy(np.stack(xs))
            y = torch.from_numpy(np.stack(ys))
            l_t, l_t1 = net(x[:, 0:1], x[:, 1:2])
            loss = codetect_loss(l_t, l_t1, y[:, 0:1], y[:, 1:2])
            if not torch.isfinite(loss):
                raise TrainingError("co-detection loss became non-finite", epoch)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        history.append(float(np.mean(losses)))
        log.debug("codetect epoch %d loss %.5f", epoch, history[-1])
    net.eval()
    net.history = history
    net.initial_loss = initial
    net.final_loss = _full_loss(net, imgs, maps)
    return net


def detect_peaks(likelihood, peak_threshold=0.3, min_distance=6.0):
    """Local maxima above ``peak_threshold``, greedily thinned.

    Candidates are pixels equal to their 3x3 neighbourhood maximum; they are
    visited in descending value (ties: row, then column) and kept when at
    least ``min_distance`` away from every peak kept so far.

    Returns
    -------
    list of (x, y) float tuples, strongest first.
    """
    m = np.asarray(likelihood, dtype=np.float64)
    local_max = m == ndimage.maximum_filter(m, size=3, mode="constant", cval=-np.inf)
    ys, xs = np.nonzero(local_max & (m > peak_threshold))
    if len(ys) == 0:
        return []
    vals = m[ys, xs]
    order = np.lexsort((xs, ys, -vals))
    kept: list[tuple[float, float]] = []
    for k in order:
        x, y = float(xs[k]), float(ys[k])
        if all((x - kx) ** 2 + (y - ky) ** 2 >= min_distance**2 for kx, ky in kept):
            kept.append((x, y))
    return kept
