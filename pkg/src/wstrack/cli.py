"""Command-line entry point: one subcommand per pipeline stage plus ``pipeline``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import io
from .errors import WSTrackError


def _sequence_pairs(seq, stride):
    return [(t, t + stride) for t in range(len(seq) - stride)]


def cmd_synth(args):
    from .pipeline import load_config
    from .synthdata import generate_sequence

    sim = load_config(args.config).sim if args.config else load_config(env={}).sim
    for key in ("seed", "n_frames", "initial_cells", "division_prob", "motion_sigma", "noise_sigma"):
        v = getattr(args, key)
        if v is not None:
            setattr(sim, key, v)
    if args.size is not None:
        sim.image_size = (args.size, args.size)
    io.write_sequence(generate_sequence(sim), args.out, bit_depth=args.bit_depth)


def cmd_extract_points(args):
    from .synthdata import extract_points_from_fluorescence

    seq = io.read_sequence(args.data)
    if seq.fluorescence is None:
        raise WSTrackError(f"{args.data} has no fluorescence/ channel")
    pts = {t: extract_points_from_fluorescence(f, args.threshold, args.min_area) for t, f in enumerate(seq.fluorescence)}
    io.write_points_csv(pts, args.out)


def _points(args, seq):
    if args.points:
        return io.read_points_csv(args.points)
    if seq.tracks is None:
        raise WSTrackError("no --points given and the data has no tracks.csv")
    pts = {t: [] for t in range(len(seq))}
    for tr in seq.tracks:
        for f, x, y in tr.points:
            pts[f].append((x, y))
    return pts


def cmd_train_codetect(args):
    from .codetect import train_codetect
    from .training import TrainConfig

    seq = io.read_sequence(args.data)
    pts = _points(args, seq)
    data = [(seq.frames[a], seq.frames[b], pts.get(a, []), pts.get(b, [])) for a, b in _sequence_pairs(seq, args.stride)]
    cfg = TrainConfig(learning_rate=args.lr, epochs=args.epochs, seed=args.seed, sigma=args.sigma)
    net = train_codetect(data, cfg, width=args.width)
    io.save_checkpoint(net, args.out)
    print(f"loss {net.initial_loss:.5f} -> {net.final_loss:.5f}")


def cmd_bfprop(args):
    from .bfprop import BFPropConfig, mine_associations

    net = io.load_checkpoint(args.ckpt)
    seq = io.read_sequence(args.data)
    cfg = BFPropConfig(th=args.th, th_conf=args.th_conf, r=args.r)
    sets = [
        mine_associations(net, seq.frames[a], seq.frames[b], cfg, frame_index=a, stride=args.stride)
        for a, b in _sequence_pairs(seq, args.stride)
    ]
    io.write_association_sets(sets, args.out)


def cmd_build_pseudo(args):
    from .pseudo import build_pseudo_samples

    seq = io.read_sequence(args.data)
    sets = io.read_association_sets(args.bfprop)
    samples = [
        build_pseudo_samples(s, seq.frames[s.frame_index], seq.frames[s.frame_index + s.stride], args.sigma, args.r, args.motion_scale)
        for s in sets
    ]
    io.write_pseudo_samples(samples, args.out)


def cmd_train_track(args):
    from .tracknet import train_tracknet
    from .training import TrainConfig

    samples = io.read_pseudo_samples(args.pseudo)
    cfg = TrainConfig(learning_rate=args.lr, epochs=args.epochs, seed=args.seed)
    net = train_tracknet(samples, cfg, width=args.width)
    io.save_checkpoint(net, args.out)
    print(f"loss {net.initial_loss:.5f} -> {net.final_loss:.5f}")


def cmd_track(args):
    from .tracknet import track_sequence

    net = io.load_checkpoint(args.ckpt)
    seq = io.read_sequence(args.data)
    tracks = track_sequence(net, seq.frames, motion_scale=args.motion_scale, gate_radius=args.gate_radius)
    io.write_tracks_csv(tracks, args.out)


def cmd_eval(args):
    from .metrics import EvalConfig, evaluate

    report = evaluate(io.read_tracks_csv(args.gt), io.read_tracks_csv(args.pred), EvalConfig(args.match_radius))
    flat = report.as_dict()
    text = json.dumps(flat, indent=2, sort_keys=True)
    if args.report:
        Path(args.report).write_text(text + "\n")
    print(text)


def cmd_plot(args):
    from .plotting import plot_tracks

    seq = io.read_sequence(args.data)
    plot_tracks(io.read_tracks_csv(args.tracks), seq, args.out)


def cmd_pipeline(args):
    from .pipeline import load_config, run_pipeline

    cfg = load_config(args.config)
    if args.workdir:
        cfg.workdir = args.workdir
    if args.fresh:
        cfg.resume = False
    report = run_pipeline(cfg)
    print(json.dumps(report.as_dict(), indent=2, sort_keys=True, default=str))


def build_parser():
    p = argparse.ArgumentParser(prog="wstrack", description="Weakly-supervised cell tracking")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="simulate a sequence")
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--n-frames", dest="n_frames", type=int)
    s.add_argument("--initial-cells", dest="initial_cells", type=int)
    s.add_argument("--division-prob", dest="division_prob", type=float)
    s.add_argument("--motion-sigma", dest="motion_sigma", type=float)
    s.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    s.add_argument("--size", type=int)
    s.add_argument("--bit-depth", type=int, choices=(8, 16), default=8)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("extract-points", help="point labels from the fluorescence channel")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--threshold", type=float, default=0.4)
    s.add_argument("--min-area", type=int, default=4)
    s.set_defaults(func=cmd_extract_points)

    s = sub.add_parser("train-codetect", help="train the co-detection network")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--points", help="frame,x,y CSV; defaults to positions from tracks.csv")
    s.add_argument("--epochs", type=int, default=200)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--sigma", type=float, default=6.0)
    s.add_argument("--stride", type=int, default=1)
    s.add_argument("--width", type=int, default=16)
    s.set_defaults(func=cmd_train_codetect)

    s = sub.add_parser("bfprop", help="mine associations")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--th", type=float, default=0.01)
    s.add_argument("--th-conf", type=float, default=0.5)
    s.add_argument("--r", type=float, default=18.0)
    s.add_argument("--stride", type=int, default=1)
    s.set_defaults(func=cmd_bfprop)

    s = sub.add_parser("build-pseudo", help="pseudo-labels from mined associations")
    s.add_argument("--bfprop", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--sigma", type=float, default=6.0)
    s.add_argument("--r", type=float, default=18.0)
    s.add_argument("--motion-scale", type=float, default=30.0)
    s.set_defaults(func=cmd_build_pseudo)

    s = sub.add_parser("train-track", help="train the tracking network")
    s.add_argument("--pseudo", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int, default=200)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--width", type=int, default=16)
    s.set_defaults(func=cmd_train_track)

    s = sub.add_parser("track", help="track a sequence")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--motion-scale", type=float, default=30.0)
    s.add_argument("--gate-radius", type=float, default=18.0)
    s.set_defaults(func=cmd_track)

    s = sub.add_parser("eval", help="score predicted tracks")
    s.add_argument("--gt", required=True)
    s.add_argument("--pred", required=True)
    s.add_argument("--report")
    s.add_argument("--match-radius", type=float, default=10.0)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("plot", help="trajectory overlays and 3-D view")
    s.add_argument("--tracks", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_plot)

    s = sub.add_parser("pipeline", help="run every stage from a config file")
    s.add_argument("--config")
    s.add_argument("--workdir")
    s.add_argument("--fresh", action="store_true", help="ignore finished stages")
    s.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (WSTrackError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
