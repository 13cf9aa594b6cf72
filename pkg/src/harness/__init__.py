from .dataset import Dataset, low_frequency_signal, make_synthetic_dataset
from .network import Gelu, Linear, MeanPool, Model, Relu, build_model, load_weights, save_weights
from .optim import AdamLite, Sgd, make_optimizer
from .trainer import (
    SweepResult, SweepRow, evaluate, marginal_accuracy, run_experiment, run_sweep, train,
)

__all__ = [
    "Dataset", "low_frequency_signal", "make_synthetic_dataset",
    "Gelu", "Linear", "MeanPool", "Model", "Relu", "build_model", "load_weights", "save_weights",
    "AdamLite", "Sgd", "make_optimizer",
    "SweepResult", "SweepRow", "evaluate", "marginal_accuracy", "run_experiment", "run_sweep",
    "train",
]
