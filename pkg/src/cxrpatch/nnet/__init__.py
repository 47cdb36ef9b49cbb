"""Desk-scale residual classifier: model, training recipe, CAM, checkpoints."""

from .model import Conv2d, Linear, TinyResNet, softmax
from .training import (
    PatchDataset,
    TrainConfig,
    backward,
    lr_at,
    predict,
    train,
    weighted_ce_loss,
)
from .cam import Heatmap, cam
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "Conv2d",
    "Linear",
    "TinyResNet",
    "softmax",
    "PatchDataset",
    "TrainConfig",
    "backward",
    "lr_at",
    "predict",
    "train",
    "weighted_ce_loss",
    "Heatmap",
    "cam",
    "load_checkpoint",
    "save_checkpoint",
]
