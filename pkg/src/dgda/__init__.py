"""Disentangled graph domain adaptation on a small numpy autodiff engine."""

from .errors import (
    CheckpointError,
    ConfigError,
    DataValidationError,
    DgdaError,
    DomainError,
    NumericError,
    ShapeError,
)
from .graph import AugmentedGraph, DatasetSplit, Graph, augment, normalize_adjacency, structural_features
from .metrics import f1_score
from .model import DgdaParams, ModelDims, predict, predict_proba, total_loss
from .synthetic import GeneratorConfig, generate_synthetic_pair
from .trainer import TrainConfig, train, train_baseline

__version__ = "0.1.0"
