"""Minimal deterministic tensor/autodiff engine.

Loss functions live in :mod:`semcom.nn.losses` and are deliberately not
re-exported here: the transmitter endpoint imports this package and must not
pull in the task losses.
"""

from .layers import Layer, Model, conv_kernel_size, sequential
from .optim import Adam, AdamState, adam_step
from .serialize import load_model, model_from_bytes, model_to_bytes, save_model
from .tensor import Tensor

__all__ = [
    "Adam",
    "AdamState",
    "Layer",
    "Model",
    "Tensor",
    "adam_step",
    "conv_kernel_size",
    "load_model",
    "model_from_bytes",
    "model_to_bytes",
    "save_model",
    "sequential",
]
