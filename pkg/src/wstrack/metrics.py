"""Tracking and detection metrics.

Ground-truth and predicted tracks are both ``GroundTruthTrack``-shaped
records.  Per frame, GT points are matched to predicted points greedily by
ascending distance inside ``match_radius``; the link-level metrics are built
on that matching.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigError, InputError
from .synthdata import ground_truth_links

__all__ = [
    "EvalConfig",
    "EvalReport",
    "match_points",
    "association_accuracy",
    "target_effectiveness",
    "detection_prf",
    "association_prf",
    "division_recall",
    "evaluate",
]


@dataclass
class EvalConfig:
    match_radius: float = 10.0

    def validate(self):
        if not self.match_radius > 0:
            raise ConfigError("match_radius must be > 0")


@dataclass
class EvalReport:
    association_accuracy: float
    target_effectiveness: float
    precision: float
    recall: float
    f1: float
    tp: int = 0
    fp: int = 0
    fn: int = 0
    division_recall: float = float("nan")
    extra: dict = field(default_factory=dict)

    def as_dict(self):
        d = asdict(self)
        extra = d.pop("extra")
        d.update(extra)
        return d


def match_points(gt, pred, radius):
    """Greedy one-to-one matching by ascending distance; returns {gt_i: pred_j}."""
    if len(gt) == 0 or len(pred) == 0:
        return {}
    g = np.asarray(gt, dtype=np.float64).reshape(-1, 2)
    p = np.asarray(pred, dtype=np.float64).reshape(-1, 2)
    d = np.hypot(g[:, None, 0] - p[None, :, 0], g[:, None, 1] - p[None, :, 1])
    ii, jj = np.nonzero(d <= radius)
    order = np.lexsort((jj, ii, d[ii, jj]))
    out, used = {}, set()
    for k in order:
        i, j = int(ii[k]), int(jj[k])
        if i not in out and j not in used:
            out[i] = j
            used.add(j)
    return out


def _frame_table(tracks):
    """frame -> list of (x, y, track_id)"""
    table: dict[int, list] = {}
    for tr in tracks:
        for f, x, y in tr.points:
            table.setdefault(f, []).append((x, y, tr.track_id))
    return table


class _Matcher:
    """Frame-wise GT->prediction correspondence shared by the link metrics."""

    def __init__(self, gt, pred, radius):
        self.gt = gt
        self.pred = pred
        self.pred_by_id = {t.track_id: t for t in pred}
        self.gt_table = _frame_table(gt)
        pred_table = _frame_table(pred)
        self.assign = {}  # (gt_id, frame) -> pred_id
        for f, gpts in self.gt_table.items():
            ppts = pred_table.get(f, [])
            m = match_points([(x, y) for x, y, _ in gpts], [(x, y) for x, y, _ in ppts], radius)
            for gi, pj in m.items():
                self.assign[(gpts[gi][2], f)] = ppts[pj][2]

    def frames(self):
        return sorted(self.gt_table)

    def link_credit(self, a, b, f, division):
        """Predicted link credited for GT link a@f -> b@f+1, or None."""
        pa = self.assign.get((a, f))
        pb = self.assign.get((b, f + 1))
        if pa is None or pb is None:
            return None
        if pa == pb:
            return ("cont", pa, f)
        if division:
            child = self.pred_by_id[pb]
            mother = self.pred_by_id[pa]
            if child.parent_id == pa and child.start == f + 1 and mother.end == f:
                return ("parent", pb, f)
        return None


def _predicted_links(pred):
    links = set()
    by_id = {t.track_id: t for t in pred}
    for tr in pred:
        for f, _, _ in tr.points[:-1]:
            links.add(("cont", tr.track_id, f))
        if tr.parent_id is not None and tr.parent_id in by_id and tr.points:
            mother = by_id[tr.parent_id]
            if mother.points and mother.end == tr.start - 1:
                links.add(("parent", tr.track_id, tr.start - 1))
    return links


def _gt_links(gt):
    by_id = {t.track_id: t for t in gt}
    frames = sorted({f for t in gt for f, _, _ in t.points})
    out = []
    for f in frames:
        for a, b in ground_truth_links(gt, f, 1):
            out.append((a, b, f, a != b and by_id[b].parent_id == a))
    return out


def association_accuracy(gt, pred, cfg: EvalConfig | None = None):
    """TP links / GT links.

    Returns ``(aa, counts)`` with ``counts`` holding ``tp``, ``fp``, ``fn``
    and ``gt_links``.  A GT link is TP when both endpoints are matched and the
    matched predictions are consecutive points of one predicted track; GT
    division links are also credited through a predicted parent link.  Every
    predicted link not credited to some GT link is a false positive.
    """
    cfg = cfg or EvalConfig()
    cfg.validate()
    links = _gt_links(gt)
    if not links:
        raise InputError("ground truth contains no associations")
    m = _Matcher(gt, pred, cfg.match_radius)
    credited = set()
    tp = 0
    for a, b, f, div in links:
        c = m.link_credit(a, b, f, div)
        if c is not None and c not in credited:
            credited.add(c)
            tp += 1
    plinks = _predicted_links(pred)
    fp = len(plinks - credited)
    counts = {"tp": tp, "fp": fp, "fn": len(links) - tp, "gt_links": len(links)}
    return tp / len(links), counts


def target_effectiveness(gt, pred, cfg: EvalConfig | None = None):
    """Observations covered by each target's best predicted track, over all
    target observations."""
    cfg = cfg or EvalConfig()
    cfg.validate()
    total = sum(len(t.points) for t in gt)
    if total == 0:
        raise InputError("ground truth contains no targets")
    m = _Matcher(gt, pred, cfg.match_radius)
    covered = 0
    for tr in gt:
        counts: dict[int, int] = {}
        for f, _, _ in tr.points:
            pid = m.assign.get((tr.track_id, f))
            if pid is not None:
                counts[pid] = counts.get(pid, 0) + 1
        if counts:
            covered += max(counts.values())
    return covered / total


def _optimal_match_count(gt, pred, radius):
    if len(gt) == 0 or len(pred) == 0:
        return 0
    g = np.asarray(gt, dtype=np.float64).reshape(-1, 2)
    p = np.asarray(pred, dtype=np.float64).reshape(-1, 2)
    d = np.hypot(g[:, None, 0] - p[None, :, 0], g[:, None, 1] - p[None, :, 1])
    # out-of-gate pairs cost more than any set of in-gate pairs
    big = radius * (len(g) + len(p) + 1) + 1.0
    cost = np.where(d <= radius, d, big)
    rows, cols = linear_sum_assignment(cost)
    return int(np.sum(d[rows, cols] <= radius))


def detection_prf(gt_points, pred_points, match_radius=10.0):
    """Precision, recall and F1 of point detections.

    Accepts a single list of (x, y) or a list of per-frame lists.  Matching
    per frame is a minimum-cost one-to-one assignment on distance with the
    gate ``match_radius``.  Returns ``(precision, recall, f1)``; ratios with a
    zero denominator are 1.0 when nothing was expected either, else 0.0.
    """
    gt_frames, pred_frames = _as_frames(gt_points), _as_frames(pred_points)
    if len(gt_frames) != len(pred_frames):
        raise InputError("gt and pred cover a different number of frames")
    tp = n_gt = n_pred = 0
    for g, p in zip(gt_frames, pred_frames):
        tp += _optimal_match_count(g, p, match_radius)
        n_gt += len(g)
        n_pred += len(p)
    return _prf(tp, n_pred, n_gt)


def _as_frames(points):
    points = list(points)
    if points and len(points[0]) == 2 and np.isscalar(points[0][0]):
        return [points]
    if not points:
        return [[]]
    return [list(f) for f in points]


def _prf(tp, n_pred, n_true):
    precision = tp / n_pred if n_pred else (1.0 if n_true == 0 else 0.0)
    recall = tp / n_true if n_true else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def association_prf(gt, assoc_sets, match_radius=10.0):
    """Precision/recall/F1 of mined association pairs against GT lineage.

    A mined pair (cell at t+k -> detection at t) is correct when both ends
    match GT points and the t+k point is the same target as, or a descendant
    of, the t point.  Recall is measured over every GT link of the covered
    frame pairs.  Returns ``(precision, recall, f1, counts)``.
    """
    table = _frame_table(gt)
    tp = n_pairs = n_links = 0
    for aset in assoc_sets:
        f, k = aset.frame_index, aset.stride
        g_t = table.get(f, [])
        g_t1 = table.get(f + k, [])
        m_t = match_points([(x, y) for x, y, _ in g_t], aset.positions_t, match_radius)
        m_t1 = match_points([(x, y) for x, y, _ in g_t1], aset.positions_t1, match_radius)
        det_gt = {j: g_t[i][2] for i, j in m_t.items()}
        cell_gt = {j: g_t1[i][2] for i, j in m_t1.items()}
        links = set(ground_truth_links(gt, f, k))
        n_links += len(links)
        n_pairs += len(aset.pairs)
        for p in aset.pairs:
            a = det_gt.get(p.detection_index)
            b = cell_gt.get(p.cell_index)
            if a is not None and b is not None and (a, b) in links:
                tp += 1
    precision, recall, f1 = _prf(tp, n_pairs, n_links)
    return precision, recall, f1, {"tp": tp, "fp": n_pairs - tp, "fn": n_links - tp}


def division_recall(gt, pred, cfg: EvalConfig | None = None):
    """Fraction of GT divisions whose two mother->child links are both TP.

    Returns ``(recall, n_divisions)``; recall is NaN without divisions.
    """
    cfg = cfg or EvalConfig()
    m = _Matcher(gt, pred, cfg.match_radius)
    children: dict[tuple[int, int], list[int]] = {}
    for a, b, f, div in _gt_links(gt):
        if div:
            children.setdefault((a, f), []).append(b)
    hits = 0
    for (a, f), kids in children.items():
        if all(m.link_credit(a, b, f, True) is not None for b in kids):
            hits += 1
    n = len(children)
    return (hits / n if n else float("nan")), n


def evaluate(gt, pred, cfg: EvalConfig | None = None):
    """Full :class:`EvalReport` of ``pred`` tracks against ``gt`` tracks."""
    cfg = cfg or EvalConfig()
    aa, counts = association_accuracy(gt, pred, cfg)
    te = target_effectiveness(gt, pred, cfg)
    gt_tab, pred_tab = _frame_table(gt), _frame_table(pred)
    frames = sorted(gt_tab)
    p, r, f1 = detection_prf(
        [[(x, y) for x, y, _ in gt_tab.get(f, [])] for f in frames],
        [[(x, y) for x, y, _ in pred_tab.get(f, [])] for f in frames],
        cfg.match_radius,
    )
    dr, n_div = division_recall(gt, pred, cfg)
    return EvalReport(
        association_accuracy=aa,
        target_effectiveness=te,
        precision=p,
        recall=r,
        f1=f1,
        tp=counts["tp"],
        fp=counts["fp"],
        fn=counts["fn"],
        division_recall=dr,
        extra={"gt_links": counts["gt_links"], "divisions": n_div},
    )
