"""Losses, optimizer, augmentation and the training loop."""
from .augment import ROTATIONS, BatchSample, apply_transform, augment, flip, random_transform, rot90, rotate
from .inference import predict_patches, predict_volume
from .losses import (ALPHA_RANGE, P_CLAMP, SupervisionWeights, alpha_for_batch, signal_names, signal_tensors,
                     signal_weights, total_loss, wbce_loss, weighted_sum)
from .loop import (Case, NonFiniteLossError, TrainConfig, TrainResult, maybe_augment, sample_batch, stream,
                   train_loop, train_step)
from .optim import AdamState, NonFiniteGradientError, adam_step, lr_at

__all__ = [
    "ROTATIONS", "BatchSample", "apply_transform", "augment", "flip", "random_transform", "rot90", "rotate",
    "predict_patches", "predict_volume", "ALPHA_RANGE", "P_CLAMP", "SupervisionWeights", "alpha_for_batch",
    "signal_names", "signal_tensors", "signal_weights", "total_loss", "wbce_loss", "weighted_sum", "Case",
    "NonFiniteLossError", "TrainConfig", "TrainResult", "maybe_augment", "sample_batch", "stream", "train_loop",
    "train_step", "AdamState", "NonFiniteGradientError", "adam_step", "lr_at",
]
