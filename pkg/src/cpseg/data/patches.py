"""Sliding-window patch grid, intensity normalization and prediction fusion."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volume import Volume


def normalize(data: np.ndarray) -> np.ndarray:
    """Z-score over nonzero voxels; zero voxels stay zero."""
    data = np.asarray(data, dtype=np.float64)
    mask = data != 0
    if not mask.any():
        return data.astype(np.float32)
    vals = data[mask]
    std = vals.std()
    out = np.zeros_like(data)
    out[mask] = (vals - vals.mean()) / (std if std > 0 else 1.0)
    return out.astype(np.float32)


def axis_origins(length: int, patch: int, stride: int) -> list[int]:
    """Multiples of ``stride``, plus a last origin clamped so the patch ends at the border."""
    if length <= patch:
        return [0]
    origins = list(range(0, length - patch + 1, stride))
    if origins[-1] + patch < length:
        origins.append(length - patch)
    return origins


@dataclass
class PatchGrid:
    shape: tuple[int, int, int]  # original volume dims
    patch_size: int = 64
    stride: int = 32

    def __post_init__(self):
        if self.stride < 1 or self.patch_size < 1:
            raise ValueError("patch_size and stride must be positive")
        if self.stride > self.patch_size:
            raise ValueError(f"stride {self.stride} > patch_size {self.patch_size} leaves voxels uncovered")
        self.shape = tuple(int(s) for s in self.shape)

    @property
    def padded_shape(self) -> tuple[int, int, int]:
        return tuple(max(s, self.patch_size) for s in self.shape)

    @property
    def origins(self) -> list[tuple[int, int, int]]:
        per_axis = [axis_origins(s, self.patch_size, self.stride) for s in self.padded_shape]
        return [(a, b, c) for a in per_axis[0] for b in per_axis[1] for c in per_axis[2]]

    def __len__(self) -> int:
        return len(self.origins)

    def slices(self, origin) -> tuple[slice, slice, slice]:
        return tuple(slice(o, o + self.patch_size) for o in origin)

    def coverage(self) -> np.ndarray:
        count = np.zeros(self.padded_shape, dtype=np.int32)
        for o in self.origins:
            count[self.slices(o)] += 1
        return count


def pad_to(data: np.ndarray, shape) -> np.ndarray:
    pad = [(0, max(0, t - s)) for s, t in zip(data.shape, shape)]
    return np.pad(data, pad) if any(p[1] for p in pad) else data


def extract_patches(volume: Volume | np.ndarray, patch_size: int = 64, stride: int = 32,
                    normalize_intensity: bool = True) -> tuple[PatchGrid, np.ndarray]:
    """Patch grid and an array of patches (P, 1, S, S, S); small volumes are zero-padded."""
    data = volume.data if isinstance(volume, Volume) else np.asarray(volume)
    grid = PatchGrid(data.shape, patch_size, stride)
    if normalize_intensity:
        data = normalize(data)
    data = pad_to(data, grid.padded_shape)
    patches = np.stack([data[grid.slices(o)] for o in grid.origins])[:, None]
    return grid, patches


def fuse_predictions(grid: PatchGrid, patch_probs) -> np.ndarray:
    """Voxelwise mean of every patch covering a voxel, cropped to the original dims."""
    patch_probs = list(patch_probs)
    origins = grid.origins
    if len(patch_probs) != len(origins):
        raise ValueError(f"fuse_predictions: expected {len(origins)} patches, got {len(patch_probs)}")
    acc = np.zeros(grid.padded_shape, dtype=np.float64)
    count = np.zeros(grid.padded_shape, dtype=np.int32)
    for o, p in zip(origins, patch_probs):
        p = np.asarray(p).reshape((grid.patch_size,) * 3)
        sl = grid.slices(o)
        acc[sl] += p
        count[sl] += 1
    if count.min() < 1:
        raise ValueError("fuse_predictions: grid leaves voxels uncovered")
    fused = acc / count
    d, h, w = grid.shape
    return fused[:d, :h, :w].astype(np.float32)


def binarize(prob: Volume | np.ndarray, threshold: float = 0.5):
    """1 where prob > threshold (strict)."""
    if isinstance(prob, Volume):
        return prob.like((prob.data > threshold).astype(np.uint8))
    return (np.asarray(prob) > threshold).astype(np.uint8)
