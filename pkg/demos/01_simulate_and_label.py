"""Simulate a short sequence, write it to disk and recover point labels.

Run with ``python3 demos/01_simulate_and_label.py [outdir]``.
"""
import sys
from pathlib import Path

from wstrack import io
from wstrack.synthdata import SimConfig, extract_points_from_fluorescence, generate_sequence, points_at_frame

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/sim")
seq = generate_sequence(SimConfig(seed=3, n_frames=8, initial_cells=6, image_size=(96, 96)))
io.write_sequence(seq, out)
print(f"{len(seq)} frames of shape {seq.shape}, {len(seq.tracks)} ground-truth tracks -> {out}")

# the fluorescence channel is the weak label source
for t in (0, len(seq) - 1):
    found = extract_points_from_fluorescence(seq.fluorescence[t])
    print(f"frame {t}: {len(points_at_frame(seq.tracks, t)[0])} cells, {len(found)} points extracted")
