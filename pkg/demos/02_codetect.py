"""Train a small co-detection network and read peaks off its output maps."""
import numpy as np

from wstrack import TrainConfig, codetect_forward, detect_peaks, generate_sequence, train_codetect
from wstrack.metrics import detection_prf
from wstrack.synthdata import SimConfig, points_at_frame

seq = generate_sequence(SimConfig(seed=3, n_frames=8, initial_cells=6, image_size=(64, 64)))
pts = [points_at_frame(seq.tracks, t)[0] for t in range(len(seq))]
data = [(seq.frames[t], seq.frames[t + 1], pts[t], pts[t + 1]) for t in range(len(seq) - 1)]

net = train_codetect(data, TrainConfig(epochs=40, seed=0), width=8)
print(f"training loss {net.initial_loss:.4f} -> {net.final_loss:.4f}")

l_t, l_t1 = codetect_forward(net, seq.frames[0], seq.frames[1])
peaks = detect_peaks(l_t1)
p, r, f1 = detection_prf(pts[1], peaks)
print(f"frame 1: {len(peaks)} peaks, precision {p:.2f} recall {r:.2f}")
print("max likelihood", float(np.max(l_t1)))
