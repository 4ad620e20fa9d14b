"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 1-5 are exact property checks and take seconds.  Criteria 6-8 run
the end-to-end pipeline on simulated data (about a quarter hour on one CPU
core).  Run just this file with::

    pytest -v tests/test_acceptance.py

The pass/fail lines are repeated in the "acceptance criteria" section of the
terminal summary.
"""
import filecmp
import math
import sys
import time

import numpy as np
import pytest
import torch

from conftest import (
    acceptance_config,
    assignment_objective,
    brute_force_assignment,
    positive_net,
    record_criterion,
    track,
)
from wstrack.bfprop import (
    RelevancePair,
    guided_backprop,
    init_target_map,
    match_one_by_one,
    max_projection,
    solve_assignment,
)
from wstrack.codetect import CoDetectNet
from wstrack.heatmap import render_likelihood
from wstrack.layers import guided_mode, probe_rectifiers
from wstrack.metrics import association_accuracy, evaluate, target_effectiveness
from wstrack.pipeline import load_config, run_pipeline
from wstrack.pseudo import PseudoSample, masked_loss

# tolerances and thresholds
GB_REL_TOL = 1e-3
TE_TOL = 1e-9
MIN_DETECTION_F1 = 0.90
MIN_MINED_PRECISION = 0.90
AA_SLACK = 0.02
MAX_F1_DROP = 0.08
MAX_SECONDS = 30 * 60
N_LP_INSTANCES = 200


def test_criterion_1_lp_matching_oracle():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    mismatches = 0
    for k in range(N_LP_INSTANCES):
        n, m = (int(v) for v in rng.integers(1, 7, 2))
        cost = rng.uniform(0, 1, (n, m))
        if k % 2 == 0:
            pairs, total = solve_assignment(cost)
            want = brute_force_assignment(cost)
            got = assignment_objective(cost, pairs)
        else:
            # the form match_one_by_one solves: detections may stay unmatched
            free = rng.uniform(0, 0.5, m)
            pairs, total = solve_assignment(cost, unmatched_col_cost=free)
            want = brute_force_assignment(cost, None, free)
            got = assignment_objective(cost, pairs, None, free)
        mismatches += not (got == want and total == got)
    # and end to end through match_one_by_one on rendered responses
    yy, xx = np.mgrid[0:48, 0:48]
    for _ in range(20):
        n, m = (int(v) for v in rng.integers(1, 6, 2))
        dets = [tuple(p) for p in rng.uniform(4, 44, (m, 2))]
        resp = [render_likelihood([tuple(p)], 6.0, (48, 48)) * rng.uniform(0.2, 1) for p in rng.uniform(4, 44, (n, 2))]
        s = match_one_by_one(resp, dets, 6.0, 18.0)
        cost, free = np.zeros((n, m)), np.zeros(m)
        for j, (dx, dy) in enumerate(dets):
            win = (xx - dx) ** 2 + (yy - dy) ** 2 <= 18**2
            g = np.exp(-((xx - dx) ** 2 + (yy - dy) ** 2) / 72.0)[win]
            free[j] = np.mean(g**2)
            for i in range(n):
                cost[i, j] = np.mean((resp[i][win] - g) ** 2)
        pairs = [(p.cell_index, p.detection_index) for p in s.pairs]
        mismatches += assignment_objective(cost, pairs, None, free) != brute_force_assignment(cost, None, free)
    seconds = time.perf_counter() - t0
    ok = mismatches == 0 and seconds < 10
    record_criterion(1, ok, f"{N_LP_INSTANCES}+20 instances, {mismatches} mismatches, {seconds:.2f}s (< 10s)")
    assert ok


def test_criterion_2_guided_backprop():
    rng = np.random.default_rng(2)
    # (a) finite differences on an all-positive float64 network
    net = positive_net()
    a, b = rng.uniform(0.1, 1.0, (2, 32, 32))
    target = init_target_map(render_likelihood([(16, 16)], 4.0, (32, 32)), (16, 16), 10)
    rp = guided_backprop(net, a, b, target)

    def score(x_t, x_t1):
        with torch.no_grad():
            _, l1 = net(torch.as_tensor(x_t)[None, None], torch.as_tensor(x_t1)[None, None])
        return float((l1[0, 0].numpy() * target).sum())

    worst = 0.0
    eps = 1e-4
    for frame, g in ((0, rp.g_t), (1, rp.g_t1)):
        for y, x in rng.integers(2, 30, (12, 2)):
            imgs = [a.copy(), b.copy()]
            imgs[frame][y, x] += eps
            up = score(*imgs)
            imgs[frame][y, x] -= 2 * eps
            fd = (up - score(*imgs)) / (2 * eps)
            worst = max(worst, abs(g[y, x] - fd) / abs(fd))
    ok_a = worst <= GB_REL_TOL

    # (b) gating at every rectifier on random inputs
    torch.manual_seed(2)
    net = CoDetectNet(width=4).double()
    violations = checked = 0
    for _ in range(5):
        x_t = torch.as_tensor(rng.uniform(0, 1, (1, 1, 32, 32))).requires_grad_(True)
        x_t1 = torch.as_tensor(rng.uniform(0, 1, (1, 1, 32, 32))).requires_grad_(True)
        with guided_mode(net), probe_rectifiers(net) as records:
            _, l1 = net(x_t, x_t1)
            l1.backward(torch.as_tensor(rng.uniform(-1, 1, (1, 1, 32, 32))))
        for pre, sig in records:
            if sig is None:
                continue
            checked += 1
            violations += int((sig < 0).sum()) + int((sig[pre <= 0] != 0).sum())
    ok_b = violations == 0 and checked > 0
    record_criterion(
        2,
        ok_a and ok_b,
        f"(a) worst rel. error {worst:.2e} (<= {GB_REL_TOL}); (b) {checked} rectifier signals, {violations} violations",
    )
    assert ok_a and ok_b


def test_criterion_3_max_projection():
    rng = np.random.default_rng(3)
    bad = 0
    for _ in range(50):
        n = int(rng.integers(1, 7))
        stack = rng.normal(size=(n, 2, 9, 11))
        out = max_projection([RelevancePair(i, stack[i, 0], stack[i, 1]) for i in range(n)])
        for k, attr in enumerate(("g_t", "g_t1")):
            got = np.stack([getattr(rp, attr) for rp in out])
            oracle = np.zeros_like(got)
            for y in range(9):
                for x in range(11):
                    vals = [max(stack[i, k, y, x], 0.0) for i in range(n)]
                    best = max(vals)
                    oracle[vals.index(best), y, x] = best
            bad += not np.array_equal(got, oracle)
            bad += int(np.any(np.count_nonzero(got, axis=0) > 1))
            bad += not np.array_equal(got.max(axis=0), np.clip(stack[:, k], 0, None).max(axis=0))
    record_criterion(3, bad == 0, f"50 random stacks, {bad} disagreements with the per-pixel oracle")
    assert bad == 0


def test_criterion_4_masked_loss():
    rng = np.random.default_rng(4)
    shape = (40, 48)
    ignore = rng.uniform(size=shape) < 0.3
    tp = rng.uniform(0, 1, shape)
    tm = rng.uniform(-1, 1, (2,) + shape)
    sample = PseudoSample(np.zeros(shape), np.zeros(shape), tp, tm, ignore)
    pp, pm = rng.uniform(0, 1, shape), rng.uniform(-1, 1, (2,) + shape)
    base = masked_loss(pp, pm, sample).total
    nonzero_grad = 0
    ys, xs = np.nonzero(ignore)
    for k in rng.choice(len(ys), 40, replace=False):
        y, x = ys[k], xs[k]
        for c in range(3):
            q, qm = pp.copy(), pm.copy()
            if c == 0:
                q[y, x] += 1e-3
            else:
                qm[c - 1, y, x] += 1e-3
            nonzero_grad += masked_loss(q, qm, sample).total != base
    empty = PseudoSample(np.zeros(shape), np.zeros(shape), tp, tm, np.zeros(shape, bool))
    w = tp > 0.05
    plain = np.mean((pp - tp) ** 2 + w * 0.5 * np.sum((pm - tm) ** 2, axis=0))
    gap = abs(masked_loss(pp, pm, empty).total - plain)
    ok = nonzero_grad == 0 and gap <= 4 * np.finfo(float).eps * plain
    record_criterion(4, ok, f"{nonzero_grad} nonzero gradient probes on Γ; |masked - unmasked| = {gap:.1e}")
    assert ok


def test_criterion_5_metric_fixtures():
    a = track(1, [(f, 10 + 3 * f, 10) for f in range(4)])
    b = track(2, [(f, 10 + 3 * f, 50) for f in range(4)])
    swapped = [track(7, a.points[:2] + b.points[2:]), track(8, b.points[:2] + a.points[2:])]
    _, counts = association_accuracy([a, b], swapped)
    one = [track(1, [(f, 20 + f, 20) for f in range(6)])]
    te = target_effectiveness(one, [track(5, one[0].points[:3]), track(6, one[0].points[3:])])
    perfect = evaluate([a, b], [a, b])
    ok = (
        counts["fp"] == 2
        and counts["fn"] == 2
        and abs(te - 0.5) <= TE_TOL
        and perfect.association_accuracy == perfect.target_effectiveness == perfect.f1 == 1.0
    )
    record_criterion(
        5,
        ok,
        f"swap FP={counts['fp']} FN={counts['fn']}; midpoint TE={te}; perfect AA/TE/F1="
        f"{perfect.association_accuracy}/{perfect.target_effectiveness}/{perfect.f1}",
    )
    assert ok


@pytest.mark.slow
def test_criterion_6_end_to_end(acceptance_run):
    report, _, seconds = acceptance_run
    x = report.as_dict()
    checks = {
        f"co-detection F1 {x['codetect_f1']:.3f} >= {MIN_DETECTION_F1}": x["codetect_f1"] >= MIN_DETECTION_F1,
        f"mined precision {x['mined_precision']:.3f} >= {MIN_MINED_PRECISION}": x["mined_precision"]
        >= MIN_MINED_PRECISION,
        f"mined precision >= recall ({x['mined_recall']:.3f})": x["mined_precision"] >= x["mined_recall"],
        f"tracker AA {x['association_accuracy']:.3f} >= BF AA {x['bf_association_accuracy']:.3f} - {AA_SLACK}": x[
            "association_accuracy"
        ]
        >= x["bf_association_accuracy"] - AA_SLACK,
        f"division recall {x['division_recall']:.3f} > BF {x['bf_division_recall']:.3f} "
        f"({x['divisions']} divisions)": x["divisions"] > 0 and x["division_recall"] > x["bf_division_recall"],
        f"runtime {seconds:.0f}s <= {MAX_SECONDS}s": seconds <= MAX_SECONDS,
    }
    ok = all(checks.values())
    record_criterion(6, ok, "; ".join(f"{k} [{'ok' if v else 'FAIL'}]" for k, v in checks.items()))
    assert ok, checks


@pytest.mark.slow
def test_criterion_7_interval_robustness(acceptance_run, tmp_path_factory):
    report1, _, _ = acceptance_run
    workdir = tmp_path_factory.mktemp("acceptance") / "stride3"
    report3 = run_pipeline(acceptance_config(workdir, 3))
    f1, f3 = report1.extra["mined_f1"], report3.extra["mined_f1"]
    drop = f1 - f3
    ok = drop <= MAX_F1_DROP and math.isfinite(f3)
    record_criterion(7, ok, f"mined F1 stride 1 = {f1:.3f}, stride 3 = {f3:.3f}, drop {drop:+.3f} (<= {MAX_F1_DROP})")
    assert ok


REDUCED_INI = """
[pipeline]
seed = 5
width = 8
[sim]
image_size = 64, 64
n_frames = 8
initial_cells = 5
division_prob = 0.05
min_separation = 8.0
[codetect]
epochs = 10
[track]
epochs = 10
"""


@pytest.mark.slow
def test_criterion_8_determinism(tmp_path):
    ini = tmp_path / "reduced.ini"
    ini.write_text(REDUCED_INI)
    outs = []
    for name in ("a", "b"):
        cfg = load_config(ini, env={})
        cfg.workdir = str(tmp_path / name)
        run_pipeline(cfg)
        outs.append(tmp_path / name)
    same = {
        f: filecmp.cmp(outs[0] / f, outs[1] / f, shallow=False)
        for f in ("tracks.csv", "bfprop_tracks.csv", "train/tracks.csv", "bfprop/associations.csv")
    }
    ok = all(same.values())
    record_criterion(8, ok, ", ".join(f"{k} {'identical' if v else 'DIFFERENT'}" for k, v in same.items()))
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
