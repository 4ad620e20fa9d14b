"""Weakly-supervised cell tracking from point labels.

A co-detection network is trained on point labels alone; frame-to-frame
associations are mined from it by backward-and-forward propagation and used
as pseudo-labels for a tracking network trained with a masked loss.
"""
from .bfprop import BFPropConfig, mine_associations
from .codetect import CoDetectNet, codetect_forward, detect_peaks, train_codetect
from .errors import ConfigError, InputError, StageError, TrainingError
from .heatmap import estimate_background, render_likelihood
from .metrics import EvalConfig, evaluate
from .pipeline import PipelineConfig, load_config, run_pipeline
from .pseudo import build_pseudo_samples, masked_loss
from .synthdata import SimConfig, extract_points_from_fluorescence, generate_sequence
from .tracknet import TrackNet, track_sequence, train_tracknet
from .training import TrainConfig

__version__ = "0.1.0"
