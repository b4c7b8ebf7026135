"""From-scratch 1-D CNN: layers, Adam, training loop, checkpoints."""

from .layers import (
    BatchNorm1d,
    Conv1d,
    Dense,
    Dropout,
    Elu,
    Flatten,
    MaxPool1d,
    NnError,
    NonFiniteActivation,
    ShapeMismatch,
    StaleCache,
    sigmoid,
    sigmoid_bce,
)
from .model import ConfigInvalid, Model, ModelConfig, backward, build_model, forward
from .optim import AdamState, adam_step
from .checkpoint import (
    ArchitectureMismatch,
    MagicMismatch,
    load_checkpoint,
    save_checkpoint,
)
from .train import TrainConfig, evaluate, fit, gradient_check, history_from_csv, history_to_csv

__all__ = [
    "AdamState",
    "ArchitectureMismatch",
    "BatchNorm1d",
    "ConfigInvalid",
    "Conv1d",
    "Dense",
    "Dropout",
    "Elu",
    "Flatten",
    "MagicMismatch",
    "MaxPool1d",
    "Model",
    "ModelConfig",
    "NnError",
    "NonFiniteActivation",
    "ShapeMismatch",
    "StaleCache",
    "TrainConfig",
    "adam_step",
    "backward",
    "build_model",
    "evaluate",
    "fit",
    "forward",
    "gradient_check",
    "history_from_csv",
    "history_to_csv",
    "load_checkpoint",
    "save_checkpoint",
    "sigmoid",
    "sigmoid_bce",
]
