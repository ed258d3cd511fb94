"""Co-evolving node-attribute and graph-structure embeddings over dynamic graphs."""

from .autodiff import Optimizer, Tape, Tensor
from .graph import (AttributeMatrix, DynamicGraphSequence, SnapshotGraph, load_edge_csv, load_sequence,
                    save_sequence)
from .kernels import BACKEND
from .model import ModelParams, generate_sequence, infer_future
from .synthetic import SyntheticSpec, generate_synthetic
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

__all__ = [
    "AttributeMatrix", "BACKEND", "DynamicGraphSequence", "ModelParams", "Optimizer", "SnapshotGraph",
    "SyntheticSpec", "Tape", "Tensor", "TrainConfig", "generate_sequence", "generate_synthetic",
    "infer_future", "load_checkpoint", "load_edge_csv", "load_sequence", "save_checkpoint",
    "save_sequence", "train",
]
__version__ = "0.1.0"
