"""Mine cell associations from a trained co-detection network by backprop."""
from wstrack import BFPropConfig, TrainConfig, generate_sequence, mine_associations, train_codetect
from wstrack.metrics import association_prf
from wstrack.synthdata import SimConfig, points_at_frame

seq = generate_sequence(SimConfig(seed=4, n_frames=6, initial_cells=5, image_size=(64, 64)))
pts = [points_at_frame(seq.tracks, t)[0] for t in range(len(seq))]
data = [(seq.frames[t], seq.frames[t + 1], pts[t], pts[t + 1]) for t in range(len(seq) - 1)]
net = train_codetect(data, TrainConfig(epochs=150, seed=0), width=8)

sets = [mine_associations(net, seq.frames[t], seq.frames[t + 1], BFPropConfig(), frame_index=t) for t in range(len(seq) - 1)]
for s in sets:
    print(f"pair {s.frame_index}->{s.frame_index + 1}: {len(s.pairs)} of {s.n_cells} cells kept, "
          f"{int(s.gamma.sum())} px ignored")
prec, rec, f1, counts = association_prf(seq.tracks, sets)
print(f"mined precision {prec:.2f} recall {rec:.2f} F1 {f1:.2f} {counts}")
