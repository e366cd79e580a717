"""Minimal CNN engine: layers, model configs, BCE loss, Adam, checkpoints."""

from .checkpoint import (
    Checkpoint,
    checkpoint_bytes,
    load_checkpoint,
    save_checkpoint,
)
from .layers import Conv2D, Dense, Dropout, Flatten, MaxPool2D, relu, sigmoid
from .losses import bce_grad, bce_loss, bce_sigmoid_grad
from .model import (
    LayerSpec,
    Model,
    ModelConfig,
    conv,
    dense,
    dropout,
    flatten,
    maxpool,
)
from .optim import Adam, AdamState, adam_step
from .presets import PRESET_NAMES, best_config, exp_config, preset

__all__ = [
    "Adam", "AdamState", "adam_step",
    "Checkpoint", "checkpoint_bytes", "load_checkpoint", "save_checkpoint",
    "Conv2D", "Dense", "Dropout", "Flatten", "MaxPool2D",
    "relu", "sigmoid",
    "bce_grad", "bce_loss", "bce_sigmoid_grad",
    "LayerSpec", "Model", "ModelConfig",
    "conv", "dense", "dropout", "flatten", "maxpool",
    "PRESET_NAMES", "best_config", "exp_config", "preset",
]
