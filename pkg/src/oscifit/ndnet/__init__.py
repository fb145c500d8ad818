"""A small numpy layer stack: 1-D conv/pool/upsample, dense, activations and Adam."""

from . import _kernels
from ._kernels import backend, set_backend
from .checkpoint import CheckpointError, load_layers, save_layers
from .layers import (
    Concat,
    Conv1D,
    Dense,
    Flatten,
    Layer,
    Linear,
    MaxPool1D,
    NonFiniteError,
    ReLU,
    Reshape,
    Sequential,
    Sigmoid,
    UpSample1D,
    he_uniform,
)
from .optim import Adam, AdamState, adam_step, mse, mse_grad

__all__ = [
    "Adam",
    "AdamState",
    "CheckpointError",
    "Concat",
    "Conv1D",
    "Dense",
    "Flatten",
    "Layer",
    "Linear",
    "MaxPool1D",
    "NonFiniteError",
    "ReLU",
    "Reshape",
    "Sequential",
    "Sigmoid",
    "UpSample1D",
    "adam_step",
    "backend",
    "he_uniform",
    "load_layers",
    "mse",
    "mse_grad",
    "save_layers",
    "set_backend",
]
