import itertools
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from wstrack.codetect import CoDetectNet
from wstrack.synthdata import GroundTruthTrack


def assignment_objective(cost, pairs, row_free=None, col_free=None):
    """Total of an assignment, summed in a fixed canonical order: pair costs
    by ascending row, then unmatched rows, then unmatched columns."""
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    total = 0.0
    for i, j in sorted(pairs):
        total += cost[i, j]
    rows = {i for i, _ in pairs}
    cols = {j for _, j in pairs}
    if row_free is not None:
        for i in range(n):
            if i not in rows:
                total += row_free[i]
    if col_free is not None:
        for j in range(m):
            if j not in cols:
                total += col_free[j]
    return total


def brute_force_assignment(cost, row_free=None, col_free=None):
    """Exhaustive minimum of :func:`assignment_objective`.

    Without unmatched prices only maximal assignments are enumerated (every
    row matched when n <= m, every column otherwise); with them every partial
    injection rows -> cols is.
    """
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    if row_free is None and col_free is None:
        if n <= m:
            cands = (list(enumerate(cols)) for cols in itertools.permutations(range(m), n))
        else:
            cands = ([(r, j) for j, r in enumerate(rows)] for rows in itertools.permutations(range(n), m))
    else:
        def partial(i, used):
            if i == n:
                yield []
                return
            for rest in partial(i + 1, used):
                yield rest
            for j in range(m):
                if j not in used:
                    for rest in partial(i + 1, used | {j}):
                        yield [(i, j)] + rest

        cands = partial(0, frozenset())
    return min(assignment_objective(cost, p, row_free, col_free) for p in cands)


def positive_net(seed=0):
    """Float64 co-detection net whose weights and biases are all positive, so
    every rectifier is active and every backward signal is positive."""
    torch.manual_seed(seed)
    net = CoDetectNet(width=2).double()
    with torch.no_grad():
        for name, p in net.named_parameters():
            if name.endswith("bias"):
                p.uniform_(0.01, 0.05)
            else:
                fan_in = p[0].numel()
                p.uniform_(0.1 / fan_in, 1.0 / fan_in)
    return net


def track(tid, pts, parent=None):
    return GroundTruthTrack(tid, parent, [(int(f), float(x), float(y)) for f, x, y in pts])


@pytest.fixture
def tiny_net():
    torch.manual_seed(0)
    return CoDetectNet(width=2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_INI = """
[pipeline]
seed = 1
stride = {stride}
[sim]
image_size = 128, 128
n_frames = 20
initial_cells = 15
division_prob = 0.02
min_separation = 8.0
"""


def acceptance_config(workdir, stride=1):
    """The desk-scale acceptance configuration (defaults elsewhere)."""
    from wstrack.pipeline import load_config

    path = Path(workdir).with_suffix(".ini")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(ACCEPTANCE_INI.format(stride=stride))
    cfg = load_config(path, env={})
    cfg.workdir = str(workdir)
    return cfg


@pytest.fixture(scope="session")
def acceptance_run(tmp_path_factory):
    """Stride-1 acceptance pipeline, run once per session.

    Returns ``(report, workdir, seconds)``.
    """
    from wstrack.pipeline import run_pipeline

    workdir = tmp_path_factory.mktemp("acceptance") / "stride1"
    t0 = time.perf_counter()
    report = run_pipeline(acceptance_config(workdir, 1))
    return report, workdir, time.perf_counter() - t0


_ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    _ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
