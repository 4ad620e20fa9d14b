"""Score a hand-made prediction against ground truth."""
from wstrack import EvalConfig, evaluate
from wstrack.synthdata import GroundTruthTrack

gt = [
    GroundTruthTrack(1, None, [(0, 10.0, 10.0), (1, 11.0, 10.0), (2, 12.0, 10.0)]),
    GroundTruthTrack(2, 1, [(3, 14.0, 8.0), (4, 15.0, 7.0)]),
    GroundTruthTrack(3, 1, [(3, 14.0, 14.0), (4, 15.0, 15.0)]),
]
# one child is missed entirely, the other is linked under a fresh id
pred = [
    GroundTruthTrack(7, None, [(0, 10.5, 10.0), (1, 11.0, 9.5), (2, 12.0, 10.0), (3, 14.0, 8.5), (4, 15.0, 7.0)]),
]
for k, v in sorted(evaluate(gt, pred, EvalConfig(match_radius=3.0)).as_dict().items()):
    print(f"{k:24s} {v}")
