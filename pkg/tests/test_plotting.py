import numpy as np

from conftest import track
from wstrack.plotting import plot_tracks, render_overlay, track_color
from wstrack.synthdata import ImageSequence


def _seq(n=4):
    return ImageSequence(frames=[np.zeros((64, 64)) for _ in range(n)])


def test_empty_tracks_write_plain_frames(tmp_path):
    paths = plot_tracks([], _seq(), tmp_path)
    assert len(paths) == 5 and all(p.exists() for p in paths)
    over = render_overlay(np.zeros((64, 64)), [], 0)
    assert not over.any()


def test_single_track_color_is_stable():
    tr = [track(3, [(f, 10 + 10 * f, 20) for f in range(4)])]
    c = track_color(3)
    for f in range(1, 4):
        img = render_overlay(np.zeros((64, 64)), tr, f)
        colors = {tuple(v) for v in img.reshape(-1, 3) if v.any()}
        assert colors == {c}
        assert tuple(img[20, 15]) == c  # on the polyline


def test_division_branches_from_mother_end():
    mother = track(1, [(0, 10, 32), (1, 20, 32), (2, 30, 32)])
    kid_a = track(2, [(3, 40, 20), (4, 44, 18)], parent=1)
    kid_b = track(3, [(3, 40, 44), (4, 44, 46)], parent=1)
    img = render_overlay(np.zeros((64, 64)), [mother, kid_a, kid_b], 3)
    # midpoints of the segments joining the mother's last point to each child
    assert tuple(img[26, 35]) == track_color(2)
    assert tuple(img[38, 35]) == track_color(3)
    assert tuple(img[32, 25]) == track_color(1)


def test_three_d_figure(tmp_path):
    tr = [track(1, [(f, 10 + f, 20) for f in range(4)])]
    paths = plot_tracks(tr, _seq(), tmp_path)
    assert paths[-1].name == "tracks_3d.png" and paths[-1].stat().st_size > 0
