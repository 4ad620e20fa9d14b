"""Trajectory overlays per frame and a 3-D x-y-time view."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

__all__ = ["track_color", "render_overlay", "plot_tracks"]


def track_color(track_id):
    """Stable RGB colour for a track id (tab20 cycle)."""
    import matplotlib

    rgba = matplotlib.colormaps["tab20"](track_id % 20)
    return tuple(int(round(255 * c)) for c in rgba[:3])


def _polylines(tracks, frame):
    """Per track, the points up to ``frame``; children start at the mother's
    last point so branches stay connected."""
    by_id = {t.track_id: t for t in tracks}
    lines = []
    for tr in tracks:
        pts = [(x, y) for f, x, y in tr.points if f <= frame]
        if not pts:
            continue
        mother = by_id.get(tr.parent_id) if tr.parent_id is not None else None
        if mother is not None and mother.points:
            _, mx, my = mother.points[-1]
            pts = [(mx, my)] + pts
        lines.append((tr.track_id, pts))
    return lines


def render_overlay(frame_image, tracks, frame):
    """RGB uint8 array: the frame in grey with every track drawn up to ``frame``."""
    grey = np.round(np.clip(np.asarray(frame_image, dtype=np.float64), 0, 1) * 255).astype(np.uint8)
    im = Image.fromarray(grey).convert("RGB")
    draw = ImageDraw.Draw(im)
    for tid, pts in _polylines(tracks, frame):
        color = track_color(tid)
        if len(pts) > 1:
            draw.line(pts, fill=color, width=1)
        x, y = pts[-1]
        draw.ellipse([x - 2, y - 2, x + 2, y + 2], outline=color)
    return np.asarray(im)


def plot_tracks(tracks, sequence, out_dir):
    """Write ``overlay_<t>.png`` for every frame and ``tracks_3d.png``.

    Returns the list of written paths.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for t, img in enumerate(sequence.frames):
        path = out / f"overlay_{t:04d}.png"
        Image.fromarray(render_overlay(img, tracks, t)).save(path)
        written.append(path)

    fig = plt.figure(figsize=(6, 6))
    ax = fig.add_subplot(projection="3d")
    by_id = {t.track_id: t for t in tracks}
    for tr in tracks:
        pts = list(tr.points)
        mother = by_id.get(tr.parent_id) if tr.parent_id is not None else None
        if mother is not None and mother.points:
            pts = [mother.points[-1]] + pts
        if not pts:
            continue
        f, x, y = np.array(pts).T
        ax.plot(x, y, f, color=np.array(track_color(tr.track_id)) / 255.0, lw=1.2)
    h, w = sequence.shape
    ax.set_xlim(0, w)
    ax.set_ylim(h, 0)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_zlabel("time")
    path = out / "tracks_3d.png"
    fig.savefig(path, dpi=100)
    plt.close(fig)
    written.append(path)
    return written
