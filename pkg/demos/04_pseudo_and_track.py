"""Turn mined associations into pseudo-labels, train the tracker and link tracks."""
from wstrack import (BFPropConfig, TrainConfig, build_pseudo_samples, evaluate, generate_sequence,
                     mine_associations, track_sequence, train_codetect, train_tracknet)
from wstrack.synthdata import SimConfig, points_at_frame

seq = generate_sequence(SimConfig(seed=4, n_frames=6, initial_cells=5, image_size=(64, 64)))
pts = [points_at_frame(seq.tracks, t)[0] for t in range(len(seq))]
pairs = [(seq.frames[t], seq.frames[t + 1]) for t in range(len(seq) - 1)]
det = train_codetect([(a, b, pts[t], pts[t + 1]) for t, (a, b) in enumerate(pairs)], TrainConfig(epochs=150), width=8)

samples = []
for t, (a, b) in enumerate(pairs):
    assoc = mine_associations(det, a, b, BFPropConfig(), frame_index=t)
    samples.append(build_pseudo_samples(assoc, a, b))

tracker = train_tracknet(samples, TrainConfig(epochs=150, seed=1), width=8)
tracks = track_sequence(tracker, seq.frames)
report = evaluate(seq.tracks, tracks)
print(f"{len(tracks)} tracks, association accuracy {report.association_accuracy:.3f}, "
      f"target effectiveness {report.target_effectiveness:.3f}")
