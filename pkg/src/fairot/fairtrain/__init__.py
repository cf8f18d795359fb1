"""MLP training under transport-based fairness penalties."""

from .batching import stratified_batches
from .checkpoint import load_model, save_model
from .mlp import MlpModel, backward, forward, init_mlp
from .regularizers import KINDS, Regularizer, RegValue, regularizer_value_and_grad
from .train import TrainConfig, TrainHistory, objective_and_grad, predict, train

__all__ = [
    "KINDS",
    "MlpModel",
    "RegValue",
    "Regularizer",
    "TrainConfig",
    "TrainHistory",
    "backward",
    "forward",
    "init_mlp",
    "load_model",
    "objective_and_grad",
    "predict",
    "regularizer_value_and_grad",
    "save_model",
    "stratified_batches",
    "train",
]
