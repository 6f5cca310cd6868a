"""ctxens: side-information-aware ensemble forecasting.

Learns time-varying linear combination weights for base forecasters from a
superset of their side-information features, under unconstrained, affine
(sum-to-one) or convex (unit simplex) weight constraints, with boosted-tree
and MLP meta-learners trained on constraint-specific gradients.
"""

__version__ = "0.1.0"

from .constraints import ConstraintKind
from .core import (
    PredictionBundle,
    SplitSpec,
    TimeSeriesFrame,
    WeightVector,
    build_superset_side_info,
    load_csv,
    split,
)
from .datagen import SyntheticSpec, generate_frame
from .oracle import ConditionalStats
from .pipeline import ExperimentConfig, MetaKind, run_experiment

__all__ = [
    "ConstraintKind",
    "ConditionalStats",
    "ExperimentConfig",
    "MetaKind",
    "PredictionBundle",
    "SplitSpec",
    "SyntheticSpec",
    "TimeSeriesFrame",
    "WeightVector",
    "build_superset_side_info",
    "generate_frame",
    "load_csv",
    "run_experiment",
    "split",
]
