import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis.extra.numpy import arrays
from hypothesis import strategies as st

from conftest import track
from wstrack import io
from wstrack.bfprop import Association, AssociationSet
from wstrack.codetect import CoDetectNet, codetect_forward
from wstrack.errors import InputError
from wstrack.pseudo import PseudoSample
from wstrack.synthdata import SimConfig, generate_sequence
from wstrack.tracknet import TrackNet


def test_tracks_round_trip(tmp_path):
    tracks = [track(1, [(0, 1.25, 2.5), (1, 3.0, 4.0)]), track(2, [(2, 5.5, 6.125)], parent=1)]
    path = tmp_path / "t.csv"
    io.write_tracks_csv(tracks, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "frame,track_id,parent_id,x,y"
    assert lines[1] == "0,1,,1.250,2.500"
    back = io.read_tracks_csv(path)
    assert [(t.track_id, t.parent_id, t.points) for t in back] == [(t.track_id, t.parent_id, t.points) for t in tracks]


def test_tracks_bad_header(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(InputError):
        io.read_tracks_csv(p)


@pytest.mark.parametrize("depth,tol", [(8, 0.5 / 255), (16, 0.5 / 65535)])
def test_sequence_round_trip(tmp_path, depth, tol):
    seq = generate_sequence(SimConfig(seed=1, image_size=(64, 64), n_frames=3, initial_cells=3))
    io.write_sequence(seq, tmp_path / "s", bit_depth=depth)
    names = sorted(p.name for p in (tmp_path / "s" / "frames").iterdir())
    assert names == ["frame_0000.png", "frame_0001.png", "frame_0002.png"]
    back = io.read_sequence(tmp_path / "s")
    for a, b in zip(seq.frames + seq.fluorescence, back.frames + back.fluorescence):
        assert np.abs(a - b).max() <= tol + 1e-12
    assert len(back.tracks) == len(seq.tracks)


def test_missing_sequence(tmp_path):
    with pytest.raises(InputError):
        io.read_sequence(tmp_path)


@settings(max_examples=40, deadline=None)
@given(arrays(bool, st.tuples(st.integers(1, 12), st.integers(1, 12))))
def test_rle_round_trip(mask):
    np.testing.assert_array_equal(io.decode_rle(io.encode_rle(mask), mask.shape), mask)


def test_rle_file(tmp_path, rng):
    m = rng.uniform(size=(20, 30)) < 0.3
    io.write_rle_mask(tmp_path / "g.rle", m)
    np.testing.assert_array_equal(io.read_rle_mask(tmp_path / "g.rle"), m)


def test_association_round_trip(tmp_path, rng):
    gamma = rng.uniform(size=(32, 32)) < 0.2
    s1 = AssociationSet(
        [Association(1, 0, 0.0123, 0.91)], gamma, 0, 1, [(3.0, 4.0), (10.5, 2.0)], [(5.0, 5.0), (3.5, 4.5)], 2
    )
    s2 = AssociationSet([], np.zeros((32, 32), bool), 1, 1, [], [], 0)
    io.write_association_sets([s1, s2], tmp_path / "a")
    header = (tmp_path / "a" / "associations.csv").read_text().splitlines()[0]
    assert header == "frame_t,det_x_t,det_y_t,frame_t1,cell_x_t1,cell_y_t1,cost,confidence"
    a, b = io.read_association_sets(tmp_path / "a")
    assert [(p.cell_index, p.detection_index) for p in a.pairs] == [(1, 0)]
    assert a.pairs[0].confidence == pytest.approx(0.91)
    np.testing.assert_array_equal(a.gamma, gamma)
    assert a.positions_t == s1.positions_t and a.positions_t1 == s1.positions_t1
    assert b.pairs == [] and b.frame_index == 1


def test_pseudo_round_trip(tmp_path, rng):
    s = PseudoSample(
        *rng.uniform(size=(3, 16, 16)).astype(np.float32),
        target_motion=rng.uniform(-1, 1, (2, 16, 16)).astype(np.float32),
        ignore_mask=rng.uniform(size=(16, 16)) < 0.5,
        frame_index=4,
    )
    io.write_pseudo_samples([s], tmp_path / "p")
    manifest = json.loads((tmp_path / "p" / "manifest.json").read_text())
    assert manifest["samples"][0]["frame_index"] == 4
    (b,) = io.read_pseudo_samples(tmp_path / "p")
    for name in ("i_t", "i_t1", "target_position", "target_motion", "ignore_mask"):
        np.testing.assert_array_equal(getattr(b, name), getattr(s, name))


@pytest.mark.parametrize("cls", [CoDetectNet, TrackNet])
def test_checkpoint_round_trip(tmp_path, cls):
    torch.manual_seed(0)
    net = cls(2)
    io.save_checkpoint(net, tmp_path / "c.npz")
    back = io.load_checkpoint(tmp_path / "c.npz")
    assert type(back) is cls
    for (ka, va), (kb, vb) in zip(net.state_dict().items(), back.state_dict().items()):
        assert ka == kb and torch.equal(va, vb)
    with np.load(tmp_path / "c.npz") as data:
        assert int(data["__format_version__"]) == io.CHECKPOINT_FORMAT_VERSION


def test_checkpoint_version_check(tmp_path):
    io.save_checkpoint(CoDetectNet(2), tmp_path / "c.npz")
    with np.load(tmp_path / "c.npz") as data:
        arrays_ = dict(data)
    arrays_["__format_version__"] = np.array(99)
    np.savez(tmp_path / "bad.npz", **arrays_)
    with pytest.raises(InputError):
        io.load_checkpoint(tmp_path / "bad.npz")


def test_float_image(tmp_path, rng):
    m = rng.uniform(size=(8, 9)).astype(np.float32)
    io.write_float_image(tmp_path / "m.tiff", m)
    np.testing.assert_array_equal(io.read_float_image(tmp_path / "m.tiff"), m)
