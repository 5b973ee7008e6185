"""Federated recommendation with binary codes: training, baselines, evaluation and probes."""

__version__ = "0.1.0"

from .binary import BinaryCode, ItemCodeMatrix, hamming_distance, top_k_hamming, top_k_inner
from .corpus import Dataset, SplitDataset, chronological_split, load_ratings, sample_negatives
from .discrete import (ClientState, GradientUpdate, HyperParams, aggregate_grad, aggregate_para,
                       compute_item_gradients, local_loss, local_user_update)
from .evaluation import MetricsReport, evaluate
from .fedsim import TrainState, run_round, select_clients, train

__all__ = [
    "BinaryCode", "ItemCodeMatrix", "hamming_distance", "top_k_hamming", "top_k_inner",
    "Dataset", "SplitDataset", "chronological_split", "load_ratings", "sample_negatives",
    "ClientState", "GradientUpdate", "HyperParams", "aggregate_grad", "aggregate_para",
    "compute_item_gradients", "local_loss", "local_user_update",
    "MetricsReport", "evaluate", "TrainState", "run_round", "select_clients", "train",
]
