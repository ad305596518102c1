"""pagnet: permutation-invariant hierarchical encoder-decoder for point clouds."""

from .autodiff import LinearParams, Tape, Tensor, backward, constant, parameter
from .checkpoint import load_checkpoint, save_checkpoint
from .estimators import PagClassifier, PagSegmenter
from .geometry import NeighborGraph, PointCloud, SamplingSpec
from .metrics import MetricsReport, compute_metrics
from .models import (
    TrainState,
    build_classifier,
    build_segmenter,
    build_static_plan,
    prepare_cloud,
    train_step,
)
from .netconfig import NetworkConfig, canonical_classification, canonical_segmentation
from .runconfig import RunConfig, load_run_config, parse_run_config
from .shapes import generate_shapes, make_classification_dataset, make_segmentation_dataset
from .training import run_training

__version__ = "0.1.0"

__all__ = [
    "LinearParams",
    "MetricsReport",
    "NeighborGraph",
    "NetworkConfig",
    "PagClassifier",
    "PagSegmenter",
    "PointCloud",
    "RunConfig",
    "SamplingSpec",
    "Tape",
    "Tensor",
    "TrainState",
    "backward",
    "build_classifier",
    "build_segmenter",
    "build_static_plan",
    "canonical_classification",
    "canonical_segmentation",
    "compute_metrics",
    "constant",
    "generate_shapes",
    "load_checkpoint",
    "load_run_config",
    "make_classification_dataset",
    "make_segmentation_dataset",
    "parameter",
    "parse_run_config",
    "prepare_cloud",
    "run_training",
    "save_checkpoint",
    "train_step",
    "__version__",
]
