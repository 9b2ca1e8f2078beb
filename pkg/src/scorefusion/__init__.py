"""Score-level fusion of biometric models with adaptive, per-query model selection.

The core pieces:

* :mod:`scorefusion.scorespace` holds score matrices, labels and selection masks.
* :mod:`scorefusion.fusion` implements anchor-plus-contribution (ACT) fusion and rule-based baselines.
* :mod:`scorefusion.metrics` computes Rank-1, mAP, TAR@FAR and FNIR@FPIR.
* :mod:`scorefusion.reward` scores simulated selection episodes.
* :mod:`scorefusion.selector` searches model combinations and trains a selection policy.
* :mod:`scorefusion.synth` generates synthetic datasets with known structure.
"""

from .fusion import FusionConfig, act_fuse_dataset, act_fuse_query, baseline_fuse, fuse, surrogate_anchor_fuse
from .metrics import MetricReport, build_nonmated_trials, evaluate_report
from .scorespace import Dataset, DatasetError, SelectionMask, load_dataset, save_dataset
from .synth import SynthConfig, generate

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "DatasetError",
    "FusionConfig",
    "MetricReport",
    "SelectionMask",
    "SynthConfig",
    "act_fuse_dataset",
    "act_fuse_query",
    "baseline_fuse",
    "build_nonmated_trials",
    "evaluate_report",
    "fuse",
    "generate",
    "load_dataset",
    "save_dataset",
    "surrogate_anchor_fuse",
]
