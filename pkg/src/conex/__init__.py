"""Convolutional complex knowledge graph embeddings (ConEx) with ComplEx and DistMult baselines."""
from .kgdata import Dataset, Triple, Vocabulary, load_dataset
from .model import ModelKind, ModelParams, count_parameters, init_params
from .training import TrainConfig, fit
from .evaluation import Metrics, evaluate, ensemble_evaluate

__all__ = [
    "Dataset", "Triple", "Vocabulary", "load_dataset",
    "ModelKind", "ModelParams", "count_parameters", "init_params",
    "TrainConfig", "fit", "Metrics", "evaluate", "ensemble_evaluate",
]
