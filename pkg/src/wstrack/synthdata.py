"""Synthetic time-lapse sequences with exact ground-truth tracks.

Cells are rendered as anisotropic Gaussian blobs (or bright "halo" rings) on a
smooth quadratic background, move by a clipped Gaussian random walk and divide
with a fixed per-frame probability.  A frame-aligned fluorescence-like channel
shows one compact nucleus per cell, which is what the annotation-free workflow
harvests point labels from.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from .errors import ConfigError

__all__ = [
    "SimConfig",
    "GroundTruthTrack",
    "ImageSequence",
    "generate_sequence",
    "extract_points_from_fluorescence",
    "points_at_frame",
    "ground_truth_links",
]


@dataclass
class SimConfig:
    image_size: tuple[int, int] = (128, 128)
    n_frames: int = 20
    initial_cells: int = 15
    motion_sigma: float = 1.5
    division_prob: float = 0.0
    cell_radius_range: tuple[float, float] = (5.0, 7.0)
    intensity_profile: str = "blob"
    noise_sigma: float = 0.02
    seed: int = 0
    # centroid floor enforced at every frame
    min_separation: float = 2.0
    # spacing used only when seeding frame 0
    initial_separation: float = 12.0
    margin: float = 6.0

    def validate(self) -> None:
        h, w = self.image_size
        if h < 64 or w < 64:
            raise ConfigError(f"image_size must be at least 64x64, got {self.image_size}")
        if self.n_frames < 2:
            raise ConfigError("n_frames must be >= 2")
        if self.initial_cells < 0:
            raise ConfigError("initial_cells must be >= 0")
        if not 0.0 <= self.division_prob <= 1.0:
            raise ConfigError("division_prob must lie in [0, 1]")
        lo, hi = self.cell_radius_range
        if lo <= 0 or lo > hi:
            raise ConfigError(f"invalid cell_radius_range {self.cell_radius_range}")
        if self.intensity_profile not in ("blob", "ring"):
            raise ConfigError(f"unknown intensity_profile {self.intensity_profile!r}")
        if self.motion_sigma < 0 or self.noise_sigma < 0:
            raise ConfigError("motion_sigma and noise_sigma must be non-negative")
        if self.min_separation < 2.0:
            raise ConfigError("min_separation below 2 px is not supported")
        if 2 * self.margin >= min(h, w):
            raise ConfigError("margin leaves no room for cells")


@dataclass
class GroundTruthTrack:
    track_id: int
    parent_id: Optional[int] = None
    points: list[tuple[int, float, float]] = field(default_factory=list)

    @property
    def start(self) -> int:
        return self.points[0][0]

    @property
    def end(self) -> int:
        return self.points[-1][0]

    def position(self, frame: int) -> Optional[tuple[float, float]]:
        if not self.points or frame < self.start or frame > self.end:
            return None
        _, x, y = self.points[frame - self.start]
        return x, y


@dataclass
class ImageSequence:
    frames: list[np.ndarray]
    fluorescence: Optional[list[np.ndarray]] = None
    tracks: Optional[list[GroundTruthTrack]] = None

    def __post_init__(self):
        if not self.frames:
            raise ValueError("a sequence needs at least one frame")
        shape = self.frames[0].shape
        if any(f.shape != shape for f in self.frames):
            raise ValueError("all frames must share one shape")
        if self.fluorescence is not None:
            if len(self.fluorescence) != len(self.frames):
                raise ValueError("fluorescence channel is not frame-aligned")
            if any(f.shape != shape for f in self.fluorescence):
                raise ValueError("fluorescence frames must match the frame shape")

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames[0].shape

    def __len__(self) -> int:
        return len(self.frames)


@dataclass
class _Cell:
    track_id: int
    x: float
    y: float
    radius: float
    elongation: float
    angle: float
    brightness: float


def _too_close(x, y, others, min_sep):
    for ox, oy in others:
        if (x - ox) ** 2 + (y - oy) ** 2 < min_sep**2:
            return True
    return False


def _clip_inside(x, y, cfg):
    h, w = cfg.image_size
    m = cfg.margin
    return float(np.clip(x, m, w - 1 - m)), float(np.clip(y, m, h - 1 - m))


def _seed_cells(cfg, rng, next_id):
    h, w = cfg.image_size
    m = cfg.margin
    cells = []
    placed = []
    for _ in range(cfg.initial_cells):
        for attempt in range(2000):
            sep = cfg.initial_separation if attempt < 1000 else cfg.min_separation
            x = rng.uniform(m, w - 1 - m)
            y = rng.uniform(m, h - 1 - m)
            if not _too_close(x, y, placed, max(sep, cfg.min_separation)):
                break
        else:
            raise ConfigError("could not place initial cells; lower initial_cells")
        placed.append((x, y))
        cells.append(
            _Cell(
                track_id=next_id(),
                x=x,
                y=y,
                radius=rng.uniform(*cfg.cell_radius_range),
                elongation=rng.uniform(1.0, 1.3),
                angle=rng.uniform(0, math.pi),
                brightness=rng.uniform(0.45, 0.6),
            )
        )
    return cells


def _step(cells, cfg, rng, next_id, tracks):
    """Advance every cell by one frame; returns the new cell list."""
    s = cfg.motion_sigma
    lo_r = cfg.cell_radius_range[0]
    new_cells: list[_Cell] = []
    # positions of cells not yet moved still block their current location
    pending = {id(c): (c.x, c.y) for c in cells}

    def occupied(exclude=None):
        pts = [(c.x, c.y) for c in new_cells]
        pts += [p for k, p in pending.items() if k != exclude]
        return pts

    for cell in cells:
        others = occupied(exclude=id(cell))
        divided = False
        if rng.random() < cfg.division_prob:
            for _ in range(20):
                theta = rng.uniform(0, math.pi)
                dx, dy = cell.radius * math.cos(theta), cell.radius * math.sin(theta)
                a = _clip_inside(cell.x + dx, cell.y + dy, cfg)
                b = _clip_inside(cell.x - dx, cell.y - dy, cfg)
                if (a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2 < cfg.min_separation**2:
                    continue
                if _too_close(*a, others, cfg.min_separation) or _too_close(*b, others, cfg.min_separation):
                    continue
                child_r = max(lo_r, 0.85 * cell.radius)
                for cx, cy in (a, b):
                    tid = next_id()
                    tracks[tid] = GroundTruthTrack(tid, parent_id=cell.track_id)
                    new_cells.append(
                        _Cell(tid, cx, cy, child_r, cell.elongation, theta + math.pi / 2, cell.brightness)
                    )
                divided = True
                break
        if not divided:
            nx, ny = cell.x, cell.y
            for _ in range(20):
                step = np.clip(rng.normal(0.0, s, size=2), -3 * s, 3 * s)
                px, py = _clip_inside(cell.x + step[0], cell.y + step[1], cfg)
                if not _too_close(px, py, others, cfg.min_separation):
                    nx, ny = px, py
                    break
            else:
                if _too_close(nx, ny, others, cfg.min_separation):
                    nx, ny = _escape(cell, others, cfg, rng)
            new_cells.append(
                _Cell(
                    cell.track_id,
                    nx,
                    ny,
                    cell.radius,
                    cell.elongation,
                    cell.angle + rng.normal(0.0, 0.05),
                    cell.brightness,
                )
            )
        del pending[id(cell)]
    return new_cells


def _escape(cell, others, cfg, rng):
    # rare: every proposal collided and the old spot was taken by a neighbour
    for scale in (1.0, 2.0, 4.0, 8.0):
        for _ in range(50):
            d = rng.normal(0.0, scale * max(cfg.min_separation, 1.0), size=2)
            x, y = _clip_inside(cell.x + d[0], cell.y + d[1], cfg)
            if not _too_close(x, y, others, cfg.min_separation):
                return x, y
    raise RuntimeError("simulation is too crowded to keep the minimum separation")


def _render(cells, cfg, rng, bg_coef):
    h, w = cfg.image_size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    a0, a1, a2, a3, a4, a5 = bg_coef
    img = a0 + a1 * xx + a2 * yy + a3 * xx**2 + a4 * xx * yy + a5 * yy**2
    fluo = np.full((h, w), 0.05)
    for c in cells:
        cos, sin = math.cos(c.angle), math.sin(c.angle)
        dx, dy = xx - c.x, yy - c.y
        u = (cos * dx + sin * dy) / c.elongation
        v = (-sin * dx + cos * dy) * c.elongation
        rho2 = u * u + v * v
        if cfg.intensity_profile == "blob":
            sig = 0.6 * c.radius
            img += c.brightness * np.exp(-rho2 / (2 * sig**2))
        else:
            rho = np.sqrt(rho2)
            halo = np.exp(-((rho - c.radius) ** 2) / (2 * (0.3 * c.radius) ** 2))
            body = np.exp(-rho2 / (2 * (0.6 * c.radius) ** 2))
            img += c.brightness * (halo - 0.35 * body)
        nuc = 0.3 * c.radius
        fluo += 0.9 * np.exp(-((dx**2 + dy**2) / (2 * nuc**2)))
    if cfg.noise_sigma > 0:
        img = img + rng.normal(0.0, cfg.noise_sigma, size=img.shape)
        fluo = fluo + rng.normal(0.0, cfg.noise_sigma, size=fluo.shape)
    return np.clip(img, 0.0, 1.0), np.clip(fluo, 0.0, 1.0)


def generate_sequence(config: SimConfig) -> ImageSequence:
    """Simulate a sequence, returning frames, fluorescence and GT tracks.

    Identical configs (seed included) produce bit-identical output.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    counter = iter(range(1, 1 << 30))

    def next_id():
        return next(counter)

    h, w = config.image_size
    # gentle illumination gradient, kept well inside [0, 1]
    g = rng.uniform(-1.0, 1.0, size=5)
    bg_coef = (
        0.2,
        0.04 * g[0] / w,
        0.04 * g[1] / h,
        0.04 * g[2] / w**2,
        0.04 * g[3] / (w * h),
        0.04 * g[4] / h**2,
    )

    cells = _seed_cells(config, rng, next_id)
    tracks = {c.track_id: GroundTruthTrack(c.track_id) for c in cells}
    frames, fluo = [], []
    for t in range(config.n_frames):
        for c in cells:
            tracks[c.track_id].points.append((t, c.x, c.y))
        img, fl = _render(cells, config, rng, bg_coef)
        frames.append(img)
        fluo.append(fl)
        if t < config.n_frames - 1:
            cells = _step(cells, config, rng, next_id, tracks)
    ordered = [tracks[k] for k in sorted(tracks)]
    return ImageSequence(frames=frames, fluorescence=fluo, tracks=ordered)


def extract_points_from_fluorescence(image, threshold=0.4, min_area=4):
    """Centroids (x, y) of the connected bright components of ``image``.

    Components are 8-connected regions above ``threshold`` with at least
    ``min_area`` pixels; centroids are unweighted pixel means.
    """
    image = np.asarray(image, dtype=np.float64)
    labels, n = ndimage.label(image > threshold, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return []
    index = np.arange(1, n + 1)
    areas = ndimage.sum_labels(np.ones_like(image), labels, index)
    centers = ndimage.center_of_mass(np.ones_like(image), labels, index)
    return [(float(cx), float(cy)) for (cy, cx), a in zip(centers, areas) if a >= min_area]


def points_at_frame(tracks, frame):
    """Return ``(positions, track_ids)`` of all GT points in ``frame``."""
    pos, ids = [], []
    for tr in tracks:
        p = tr.position(frame)
        if p is not None:
            pos.append(p)
            ids.append(tr.track_id)
    return pos, ids


def ground_truth_links(tracks, frame, stride=1):
    """Pairs ``(id_t, id_tk)`` such that track ``id_tk`` at ``frame+stride``
    descends from (or is) track ``id_t`` at ``frame``."""
    by_id = {t.track_id: t for t in tracks}
    links = []
    for tr in tracks:
        if tr.position(frame + stride) is None:
            continue
        anc = tr
        while anc is not None and anc.start > frame:
            anc = by_id.get(anc.parent_id) if anc.parent_id is not None else None
        if anc is not None and anc.position(frame) is not None:
            links.append((anc.track_id, tr.track_id))
    return links
