"""Sliding-window inference over a whole volume."""
from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..data.patches import binarize, extract_patches, fuse_predictions
from ..data.volume import Volume
from ..network.model import Network


def predict_patches(model: Network, patches: np.ndarray, batch_size: int = 4) -> list[np.ndarray]:
    out = []
    with T.no_grad():
        for i in range(0, len(patches), batch_size):
            x = T.Tensor(patches[i:i + batch_size], dtype=np.float32)
            prob = model(x, training=False).final_prob.data
            out.extend(prob[:, 0])
    return out


def predict_volume(model: Network, volume: Volume, patch_size: int | None = None, stride: int | None = None,
                   threshold: float = 0.5, batch_size: int = 4) -> tuple[Volume, Volume]:
    """(probability, mask) volumes sharing the input geometry."""
    patch_size = patch_size or model.config.patch_size
    stride = stride or patch_size // 2
    grid, patches = extract_patches(volume, patch_size, stride)
    prob = fuse_predictions(grid, predict_patches(model, patches, batch_size))
    prob_vol = volume.like(np.clip(prob, 0.0, 1.0).astype(np.float32))
    return prob_vol, binarize(prob_vol, threshold)
