"""End-to-end orchestration: synthesize -> labels -> co-detection -> BF-prop
-> pseudo-labels -> tracking network -> tracks -> evaluation.

Every stage writes its products under ``workdir`` and drops a ``<stage>.done``
marker; with ``resume`` a finished stage is re-loaded instead of re-run.
"""
from __future__ import annotations

import configparser
import dataclasses
import json
import logging
import os
import time
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import io
from .bfprop import BFPropConfig, associations_to_tracks, mine_associations
from .codetect import codetect_forward, detect_peaks, train_codetect
from .errors import ConfigError, StageError
from .metrics import EvalConfig, association_prf, detection_prf, evaluate
from .pseudo import build_pseudo_samples
from .synthdata import GroundTruthTrack, SimConfig, extract_points_from_fluorescence, generate_sequence
from .tracknet import track_sequence, train_tracknet
from .training import TrainConfig

log = logging.getLogger(__name__)

ENV_PREFIX = "WSTRACK_"

__all__ = ["PipelineConfig", "load_config", "run_pipeline", "subsample_tracks", "ENV_PREFIX"]


@dataclass
class PipelineConfig:
    workdir: str = "wstrack-run"
    # existing dataset with train/ and test/ sequence folders; None = simulate
    data_dir: Optional[str] = None
    # master seed; when set it replaces the sim / codetect / track seeds
    seed: Optional[int] = None
    stride: int = 1
    # "gt": weak labels from GT positions; "fluorescence": harvested nuclei
    labels: str = "gt"
    fluo_threshold: float = 0.4
    fluo_min_area: int = 4
    motion_scale: float = 30.0
    gate_radius: float = 18.0
    width: int = 16
    resume: bool = True
    sim: SimConfig = field(default_factory=SimConfig)
    test_seed_offset: int = 1000
    codetect: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=200))
    track: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=200))
    bfprop: BFPropConfig = field(default_factory=BFPropConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self):
        if self.stride < 1:
            raise ConfigError("stride must be >= 1")
        if self.labels not in ("gt", "fluorescence"):
            raise ConfigError(f"labels must be 'gt' or 'fluorescence', got {self.labels!r}")
        if self.motion_scale <= 0 or self.gate_radius <= 0:
            raise ConfigError("motion_scale and gate_radius must be positive")
        self.sim.validate()
        self.codetect.validate()
        self.track.validate()
        self.bfprop.validate()
        self.eval.validate()
        if self.data_dir is not None and not Path(self.data_dir).is_dir():
            raise ConfigError(f"data_dir {self.data_dir} does not exist")


_SECTIONS = {"sim": SimConfig, "codetect": TrainConfig, "track": TrainConfig, "bfprop": BFPropConfig, "eval": EvalConfig}


def _convert(text, tp):
    text = text.strip()
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union:
        inner = [a for a in args if a is not type(None)]
        if text.lower() in ("", "none"):
            return None
        return _convert(text, inner[0])
    if origin is tuple:
        parts = [p for p in text.replace("(", "").replace(")", "").split(",") if p.strip()]
        return tuple(_convert(p, args[0]) for p in parts)
    if tp is bool:
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {text!r}")
    if tp is int:
        return int(text)
    if tp is float:
        return float(text)
    return text


def _apply(obj, key, value, section):
    hints = typing.get_type_hints(type(obj))
    if key not in hints:
        raise ConfigError(f"unknown key '{key}' in section [{section}]")
    try:
        setattr(obj, key, _convert(value, hints[key]))
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from None


def load_config(path=None, env=None, overrides=None):
    """Build a :class:`PipelineConfig` from an INI-style file.

    Sections: ``[pipeline]``, ``[sim]``, ``[codetect]``, ``[track]``,
    ``[bfprop]``, ``[eval]``.  Environment variables named
    ``WSTRACK_<SECTION>__<KEY>`` override file values, e.g.
    ``WSTRACK_CODETECT__EPOCHS=50``.
    """
    cfg = PipelineConfig()
    values: dict[tuple[str, str], str] = {}
    if path is not None:
        parser = configparser.ConfigParser()
        if not parser.read(path):
            raise ConfigError(f"cannot read config file {path}")
        for section in parser.sections():
            for key, value in parser.items(section):
                values[(section.lower(), key.lower())] = value
    env = os.environ if env is None else env
    for name, value in env.items():
        if name.startswith(ENV_PREFIX) and "__" in name:
            section, key = name[len(ENV_PREFIX) :].split("__", 1)
            values[(section.lower(), key.lower())] = value
    for (section, key), value in (overrides or {}).items():
        values[(section, key)] = value
    for (section, key), value in sorted(values.items()):
        if section == "pipeline":
            if key in _SECTIONS:
                raise ConfigError(f"'{key}' is a section, not a [pipeline] key")
            _apply(cfg, key, value, section)
        elif section in _SECTIONS:
            _apply(getattr(cfg, section), key, value, section)
        else:
            raise ConfigError(f"unknown config section [{section}]")
    return cfg


def config_to_dict(cfg):
    return dataclasses.asdict(cfg)


def subsample_tracks(tracks, stride):
    """Keep frames divisible by ``stride`` and renumber them ``frame // stride``.

    A kept track's parent becomes its nearest ancestor that still has points.
    """
    if stride == 1:
        return tracks
    by_id = {t.track_id: t for t in tracks}
    kept = {}
    for tr in tracks:
        pts = [(f // stride, x, y) for f, x, y in tr.points if f % stride == 0]
        if pts:
            kept[tr.track_id] = pts
    out = []
    for tid in sorted(kept):
        parent = by_id[tid].parent_id
        while parent is not None and parent not in kept:
            parent = by_id[parent].parent_id
        out.append(GroundTruthTrack(tid, parent, kept[tid]))
    return out


class _Run:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.root = Path(cfg.workdir)
        self.timings = {}

    def done(self, stage):
        return self.cfg.resume and (self.root / f"{stage}.done").exists()

    def mark(self, stage):
        (self.root / f"{stage}.done").write_text("ok\n")

    def stage(self, name, fn):
        t0 = time.perf_counter()
        try:
            result = fn()
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc
        self.timings[name] = time.perf_counter() - t0
        log.info("stage %s finished in %.1fs", name, self.timings[name])
        return result


def _pairs(n, k):
    return [(t, t + k) for t in range(n - k)]


def run_pipeline(cfg: PipelineConfig):
    """Run every stage and return the tracker's :class:`EvalReport`.

    ``report.extra`` also carries the co-detection F1, the BF-prop
    association precision/recall/F1 and the BF-prop tracking scores, all
    measured on the held-out test sequence.
    """
    try:
        cfg.validate()
    except ConfigError as exc:
        raise StageError("config", exc) from exc
    if cfg.seed is not None:
        cfg = dataclasses.replace(
            cfg,
            sim=dataclasses.replace(cfg.sim, seed=cfg.seed),
            codetect=dataclasses.replace(cfg.codetect, seed=cfg.seed),
            track=dataclasses.replace(cfg.track, seed=cfg.seed + 1),
        )
    run = _Run(cfg)
    run.root.mkdir(parents=True, exist_ok=True)
    k = cfg.stride

    def synth():
        if cfg.data_dir is not None:
            return io.read_sequence(Path(cfg.data_dir) / "train"), io.read_sequence(Path(cfg.data_dir) / "test")
        if run.done("synth"):
            return io.read_sequence(run.root / "train"), io.read_sequence(run.root / "test")
        train = generate_sequence(cfg.sim)
        test = generate_sequence(dataclasses.replace(cfg.sim, seed=cfg.sim.seed + cfg.test_seed_offset))
        io.write_sequence(train, run.root / "train", bit_depth=16)
        io.write_sequence(test, run.root / "test", bit_depth=16)
        run.mark("synth")
        # reload so a fresh run sees exactly what a resumed run would
        return io.read_sequence(run.root / "train"), io.read_sequence(run.root / "test")

    train, test = run.stage("synth", synth)

    def labels():
        path = run.root / "points.csv"
        if run.done("labels"):
            return io.read_points_csv(path)
        if cfg.labels == "fluorescence":
            if train.fluorescence is None:
                raise ValueError("labels = fluorescence but the training data has no fluorescence channel")
            pts = {
                t: extract_points_from_fluorescence(f, cfg.fluo_threshold, cfg.fluo_min_area)
                for t, f in enumerate(train.fluorescence)
            }
        else:
            if train.tracks is None:
                raise ValueError("training data carries no point labels (tracks.csv)")
            pts = {t: [] for t in range(len(train))}
            for tr in train.tracks:
                for f, x, y in tr.points:
                    pts[f].append((x, y))
        io.write_points_csv(pts, path)
        run.mark("labels")
        return io.read_points_csv(path)

    points = run.stage("labels", labels)

    def codetect():
        path = run.root / "codetect.npz"
        if run.done("codetect"):
            return io.load_checkpoint(path)
        data = [(train.frames[a], train.frames[b], points.get(a, []), points.get(b, [])) for a, b in _pairs(len(train), k)]
        net = train_codetect(data, cfg.codetect, width=cfg.width)
        io.save_checkpoint(net, path)
        run.mark("codetect")
        return io.load_checkpoint(path)

    cd_net = run.stage("codetect", codetect)

    def mine(seq, name):
        def _go():
            out = run.root / name
            if run.done(name):
                return io.read_association_sets(out)
            sets = [
                mine_associations(cd_net, seq.frames[a], seq.frames[b], cfg.bfprop, frame_index=a, stride=k)
                for a, b in _pairs(len(seq), k)
            ]
            io.write_association_sets(sets, out)
            run.mark(name)
            return io.read_association_sets(out)

        return _go

    train_sets = run.stage("bfprop", mine(train, "bfprop"))

    def pseudo():
        out = run.root / "pseudo"
        if run.done("pseudo"):
            return io.read_pseudo_samples(out)
        samples = [
            build_pseudo_samples(
                s, train.frames[s.frame_index], train.frames[s.frame_index + k], cfg.bfprop.sigma, cfg.bfprop.r, cfg.motion_scale
            )
            for s in train_sets
        ]
        io.write_pseudo_samples(samples, out)
        run.mark("pseudo")
        return io.read_pseudo_samples(out)

    samples = run.stage("pseudo", pseudo)

    def track_train():
        path = run.root / "tracknet.npz"
        if run.done("tracknet"):
            return io.load_checkpoint(path)
        net = train_tracknet(samples, cfg.track, width=cfg.width)
        io.save_checkpoint(net, path)
        run.mark("tracknet")
        return io.load_checkpoint(path)

    tr_net = run.stage("tracknet", track_train)

    def track():
        path = run.root / "tracks.csv"
        if run.done("track"):
            return io.read_tracks_csv(path)
        tracks = track_sequence(
            tr_net,
            test.frames[::k],
            cfg.bfprop.peak_threshold,
            cfg.bfprop.min_distance,
            cfg.motion_scale,
            cfg.gate_radius,
        )
        io.write_tracks_csv(tracks, path)
        run.mark("track")
        return io.read_tracks_csv(path)

    pred_tracks = run.stage("track", track)
    test_sets = run.stage("bfprop_test", mine(test, "bfprop_test"))

    def evaluation():
        if test.tracks is None:
            raise ValueError("test data has no ground-truth tracks")
        gt = subsample_tracks(test.tracks, k)
        report = evaluate(gt, pred_tracks, cfg.eval)

        det_gt, det_pred = [], []
        for a, b in _pairs(len(test), k):
            l_t, l_t1 = codetect_forward(cd_net, test.frames[a], test.frames[b])
            for f, lmap in ((a, l_t), (b, l_t1)):
                det_gt.append([p for tr in test.tracks if (p := tr.position(f)) is not None])
                det_pred.append(detect_peaks(lmap, cfg.bfprop.peak_threshold, cfg.bfprop.min_distance))
        _, _, cd_f1 = detection_prf(det_gt, det_pred, cfg.eval.match_radius)

        mp, mr, mf1, _ = association_prf(test.tracks, test_sets, cfg.eval.match_radius)
        tp_, tr_, tf1_, _ = association_prf(train.tracks, train_sets, cfg.eval.match_radius) if train.tracks else (np.nan,) * 4

        chain = [s for s in test_sets if s.frame_index % k == 0]
        bf_tracks = associations_to_tracks(chain)
        if k > 1:
            bf_tracks = [
                GroundTruthTrack(t.track_id, t.parent_id, [(f // k, x, y) for f, x, y in t.points]) for t in bf_tracks
            ]
        bf = evaluate(gt, bf_tracks, cfg.eval)
        io.write_tracks_csv(bf_tracks, run.root / "bfprop_tracks.csv")

        report.extra.update(
            {
                "stride": k,
                "codetect_f1": cd_f1,
                "mined_precision": mp,
                "mined_recall": mr,
                "mined_f1": mf1,
                "mined_train_precision": tp_,
                "mined_train_recall": tr_,
                "mined_train_f1": tf1_,
                "bf_association_accuracy": bf.association_accuracy,
                "bf_target_effectiveness": bf.target_effectiveness,
                "bf_division_recall": bf.division_recall,
            }
        )
        report.extra.update({f"seconds_{name}": v for name, v in run.timings.items()})
        with open(run.root / "report.json", "w") as fh:
            json.dump(_jsonable(report.as_dict()), fh, indent=2, sort_keys=True)
        return report

    return run.stage("eval", evaluation)


def _jsonable(d):
    out = {}
    for key, v in d.items():
        if isinstance(v, (float, np.floating)):
            out[key] = None if not np.isfinite(v) else float(v)
        elif isinstance(v, np.integer):
            out[key] = int(v)
        else:
            out[key] = v
    return out
