"""File formats: image sequences, track CSVs, association CSVs, RLE masks,
pseudo-sample directories and network checkpoints."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InputError

CHECKPOINT_FORMAT_VERSION = 1

TRACK_HEADER = ["frame", "track_id", "parent_id", "x", "y"]
ASSOC_HEADER = ["frame_t", "det_x_t", "det_y_t", "frame_t1", "cell_x_t1", "cell_y_t1", "cost", "confidence"]


def _fmt(v):
    return f"{v:.3f}"


# -- tracks -----------------------------------------------------------------


def write_tracks_csv(tracks, path):
    rows = []
    for tr in tracks:
        for f, x, y in tr.points:
            rows.append((f, tr.track_id, tr.parent_id, x, y))
    rows.sort(key=lambda r: (r[0], r[1]))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACK_HEADER)
        for f, tid, pid, x, y in rows:
            w.writerow([f, tid, "" if pid is None else pid, _fmt(x), _fmt(y)])


def read_tracks_csv(path):
    from .synthdata import GroundTruthTrack

    tracks: dict[int, GroundTruthTrack] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRACK_HEADER:
            raise InputError(f"{path}: expected header {','.join(TRACK_HEADER)}")
        for row in reader:
            tid = int(row["track_id"])
            pid = int(row["parent_id"]) if row["parent_id"] else None
            tr = tracks.setdefault(tid, GroundTruthTrack(tid, pid))
            tr.points.append((int(row["frame"]), float(row["x"]), float(row["y"])))
    for tr in tracks.values():
        tr.points.sort()
    return [tracks[k] for k in sorted(tracks)]


def write_points_csv(points_per_frame, path):
    """``points_per_frame``: dict frame -> list of (x, y)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "x", "y"])
        for f in sorted(points_per_frame):
            for x, y in points_per_frame[f]:
                w.writerow([f, _fmt(x), _fmt(y)])


def read_points_csv(path):
    out: dict[int, list] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(int(row["frame"]), []).append((float(row["x"]), float(row["y"])))
    return out


# -- images -----------------------------------------------------------------


def write_gray(path, img, bit_depth=8):
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    if bit_depth == 8:
        arr = np.round(img * 255).astype(np.uint8)
    elif bit_depth == 16:
        arr = np.round(img * 65535).astype(np.uint16)
    else:
        raise InputError("bit_depth must be 8 or 16")
    Image.fromarray(arr).save(path)


def read_gray(path):
    with Image.open(path) as im:
        mode = im.mode
        arr = np.array(im)
    if mode == "L":
        return arr.astype(np.float64) / 255.0
    if mode.startswith("I;16") or mode == "I":
        return arr.astype(np.float64) / 65535.0
    if mode == "F":
        return arr.astype(np.float64)
    raise InputError(f"{path}: unsupported image mode {mode}")


def write_float_image(path, arr):
    Image.fromarray(np.asarray(arr, dtype=np.float32), mode="F").save(path, format="TIFF")


def read_float_image(path):
    with Image.open(path) as im:
        return np.array(im, dtype=np.float64)


def write_sequence(seq, directory, bit_depth=8):
    d = Path(directory)
    (d / "frames").mkdir(parents=True, exist_ok=True)
    for t, f in enumerate(seq.frames):
        write_gray(d / "frames" / f"frame_{t:04d}.png", f, bit_depth)
    if seq.fluorescence is not None:
        (d / "fluorescence").mkdir(exist_ok=True)
        for t, f in enumerate(seq.fluorescence):
            write_gray(d / "fluorescence" / f"fluo_{t:04d}.png", f, bit_depth)
    if seq.tracks is not None:
        write_tracks_csv(seq.tracks, d / "tracks.csv")


def read_sequence(directory):
    from .synthdata import ImageSequence

    d = Path(directory)
    if not (d / "frames").is_dir():
        raise InputError(f"{d}: no frames/ directory")
    frames = [read_gray(p) for p in sorted((d / "frames").glob("*.png"))]
    if not frames:
        raise InputError(f"{d}: frames/ holds no images")
    fluo = None
    if (d / "fluorescence").is_dir():
        fluo = [read_gray(p) for p in sorted((d / "fluorescence").glob("*.png"))] or None
    tracks = read_tracks_csv(d / "tracks.csv") if (d / "tracks.csv").exists() else None
    return ImageSequence(frames=frames, fluorescence=fluo, tracks=tracks)


# -- masks ------------------------------------------------------------------


def encode_rle(mask):
    """Row-major runs of True pixels as ``[start, length, ...]``."""
    flat = np.asarray(mask, dtype=bool).ravel()
    padded = np.concatenate([[False], flat, [False]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    starts, ends = edges[0::2], edges[1::2]
    return np.stack([starts, ends - starts], axis=1).ravel().tolist()


def decode_rle(runs, shape):
    flat = np.zeros(int(np.prod(shape)), dtype=bool)
    for start, length in zip(runs[0::2], runs[1::2]):
        flat[start : start + length] = True
    return flat.reshape(shape)


def write_rle_mask(path, mask):
    mask = np.asarray(mask, dtype=bool)
    runs = encode_rle(mask)
    with open(path, "w") as fh:
        fh.write(f"{mask.shape[0]} {mask.shape[1]}\n")
        fh.write(" ".join(map(str, runs)) + "\n")


def read_rle_mask(path):
    with open(path) as fh:
        h, w = map(int, fh.readline().split())
        runs = [int(v) for v in fh.readline().split()]
    return decode_rle(runs, (h, w))


# -- associations -----------------------------------------------------------


def write_association_sets(sets, directory):
    """Pairs go to ``associations.csv``, detections to ``detections.csv`` and
    each frame pair's Γ to ``gamma_<t>_<t1>.rle``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "associations.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ASSOC_HEADER)
        for s in sets:
            f1 = s.frame_index + s.stride
            for p in sorted(s.pairs, key=lambda p: p.cell_index):
                xt, yt = s.positions_t[p.detection_index]
                x1, y1 = s.positions_t1[p.cell_index]
                w.writerow([s.frame_index, _fmt(xt), _fmt(yt), f1, _fmt(x1), _fmt(y1), f"{p.cost:.6g}", f"{p.confidence:.6g}"])
    with open(d / "detections.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_t", "stride", "side", "index", "x", "y", "n_cells"])
        for s in sets:
            for side, pts in (("t", s.positions_t), ("t1", s.positions_t1)):
                for i, (x, y) in enumerate(pts):
                    w.writerow([s.frame_index, s.stride, side, i, _fmt(x), _fmt(y), s.n_cells])
            if not s.positions_t and not s.positions_t1:
                w.writerow([s.frame_index, s.stride, "none", -1, "", "", s.n_cells])
    for s in sets:
        write_rle_mask(d / f"gamma_{s.frame_index:04d}_{s.frame_index + s.stride:04d}.rle", s.gamma)


def read_association_sets(directory):
    from .bfprop import Association, AssociationSet

    d = Path(directory)
    sets: dict[int, AssociationSet] = {}
    with open(d / "detections.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            f = int(row["frame_t"])
            k = int(row["stride"])
            if f not in sets:
                gamma = read_rle_mask(d / f"gamma_{f:04d}_{f + k:04d}.rle")
                sets[f] = AssociationSet([], gamma, f, k, [], [], int(row["n_cells"]))
            if row["side"] == "t":
                sets[f].positions_t.append((float(row["x"]), float(row["y"])))
            elif row["side"] == "t1":
                sets[f].positions_t1.append((float(row["x"]), float(row["y"])))
    index = {}
    for f, s in sets.items():
        index[f] = (
            {(round(x, 3), round(y, 3)): i for i, (x, y) in enumerate(s.positions_t)},
            {(round(x, 3), round(y, 3)): i for i, (x, y) in enumerate(s.positions_t1)},
        )
    with open(d / "associations.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            f = int(row["frame_t"])
            it, it1 = index[f]
            j = it[(round(float(row["det_x_t"]), 3), round(float(row["det_y_t"]), 3))]
            i = it1[(round(float(row["cell_x_t1"]), 3), round(float(row["cell_y_t1"]), 3))]
            sets[f].pairs.append(Association(i, j, float(row["cost"]), float(row["confidence"])))
    return [sets[k] for k in sorted(sets)]


# -- pseudo samples ---------------------------------------------------------

_PSEUDO_FILES = ("i_t", "i_t1", "target_position", "motion_x", "motion_y", "ignore")


def write_pseudo_samples(samples, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest = []
    for s in samples:
        sub = f"pair_{s.frame_index:04d}"
        (d / sub).mkdir(exist_ok=True)
        arrays = (s.i_t, s.i_t1, s.target_position, s.target_motion[0], s.target_motion[1], s.ignore_mask)
        for name, arr in zip(_PSEUDO_FILES, arrays):
            write_float_image(d / sub / f"{name}.tiff", np.asarray(arr, dtype=np.float32))
        manifest.append({"frame_index": s.frame_index, "dir": sub})
    with open(d / "manifest.json", "w") as fh:
        json.dump({"samples": manifest, "channels": list(_PSEUDO_FILES)}, fh, indent=1)


def read_pseudo_samples(directory):
    from .pseudo import PseudoSample

    d = Path(directory)
    with open(d / "manifest.json") as fh:
        manifest = json.load(fh)
    out = []
    for entry in manifest["samples"]:
        arr = {n: read_float_image(d / entry["dir"] / f"{n}.tiff") for n in _PSEUDO_FILES}
        out.append(
            PseudoSample(
                i_t=arr["i_t"],
                i_t1=arr["i_t1"],
                target_position=arr["target_position"],
                target_motion=np.stack([arr["motion_x"], arr["motion_y"]]),
                ignore_mask=arr["ignore"] > 0.5,
                frame_index=entry["frame_index"],
            )
        )
    return out


# -- checkpoints ------------------------------------------------------------


def save_checkpoint(net, path):
    """Write ``net`` as an ``.npz`` container of named arrays plus metadata."""
    arrays = {f"param/{k}": v.detach().cpu().numpy() for k, v in net.state_dict().items()}
    arrays["__format_version__"] = np.array(CHECKPOINT_FORMAT_VERSION)
    arrays["__arch__"] = np.array(json.dumps(net.arch()))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    import torch

    from .codetect import CoDetectNet
    from .tracknet import TrackNet

    with np.load(path, allow_pickle=False) as data:
        version = int(data["__format_version__"])
        if version != CHECKPOINT_FORMAT_VERSION:
            raise InputError(f"{path}: unsupported checkpoint version {version}")
        arch = json.loads(str(data["__arch__"]))
        state = {k[len("param/") :]: torch.from_numpy(data[k].copy()) for k in data.files if k.startswith("param/")}
    kinds = {"CoDetectNet": CoDetectNet, "TrackNet": TrackNet}
    if arch.get("type") not in kinds:
        raise InputError(f"{path}: unknown architecture {arch}")
    net = kinds[arch["type"]](width=arch["width"])
    net.load_state_dict(state)
    net.eval()
    return net
