"""Training configuration and the small augmentation helpers both networks use."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .errors import ConfigError

__all__ = ["TrainConfig", "dihedral", "crop_batch", "seed_everything"]


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 4
    seed: int = 0
    sigma: float = 6.0
    # random square crops (multiple of 16); None trains on whole frames
    crop_size: Optional[int] = 64
    augment: bool = True

    def validate(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.sigma <= 0:
            raise ConfigError("sigma must be > 0")
        if self.crop_size is not None and (self.crop_size < 16 or self.crop_size % 16):
            raise ConfigError("crop_size must be a positive multiple of 16")


def seed_everything(seed):
    torch.manual_seed(seed)
    return np.random.default_rng(seed)


def dihedral(arr, k):
    """Apply one of the 8 square symmetries to the last two axes of ``arr``.

    Returns a contiguous copy.  ``k`` in 0..7: rotation by ``k % 4`` quarter
    turns, preceded by a horizontal flip when ``k >= 4``.
    """
    out = arr
    if k >= 4:
        out = out[..., ::-1]
    out = np.rot90(out, k % 4, axes=(-2, -1))
    return np.ascontiguousarray(out)


def dihedral_vectors(vx, vy, k):
    """Transform a displacement field's components consistently with
    :func:`dihedral` applied to the field's grids.  Inputs are already-moved
    grids; only the vector components are remixed here."""
    if k >= 4:
        vx = -vx
    for _ in range(k % 4):
        # np.rot90 (counter-clockwise in array view): new_x = y, new_y = -x
        vx, vy = vy, -vx
    return vx, vy


def crop_batch(arrays, size, rng):
    """Crop the same random window out of every ``(..., H, W)`` array."""
    h, w = arrays[0].shape[-2:]
    if size is None or (size >= h and size >= w):
        return arrays
    size_h, size_w = min(size, h), min(size, w)
    y0 = int(rng.integers(0, h - size_h + 1))
    x0 = int(rng.integers(0, w - size_w + 1))
    return [a[..., y0 : y0 + size_h, x0 : x0 + size_w] for a in arrays]
