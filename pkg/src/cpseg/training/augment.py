"""Random flips and axis-aligned 90 degree rotations of cubic patches."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

SPATIAL = (-3, -2, -1)


def _proper_rotations() -> list[tuple[tuple[int, int, int], tuple[int, int, int]]]:
    out = []
    for perm in itertools.permutations(range(3)):
        parity = np.linalg.det(np.eye(3)[list(perm)])
        for signs in itertools.product((1, -1), repeat=3):
            if round(parity * np.prod(signs)) == 1:
                out.append((perm, signs))
    return out


# the 24 orientation-preserving symmetries of the cube, as (axis permutation, axis signs)
ROTATIONS = _proper_rotations()


@dataclass
class BatchSample:
    image: np.ndarray  # (N, 1, S, S, S) float
    label: np.ndarray  # (N, 1, S, S, S) {0, 1}


def flip(a: np.ndarray, axes) -> np.ndarray:
    axes = [SPATIAL[i] for i in axes]
    return np.flip(a, axis=axes) if axes else a


def rotate(a: np.ndarray, rotation) -> np.ndarray:
    perm, signs = rotation
    nd = a.ndim
    order = list(range(nd - 3)) + [nd - 3 + p for p in perm]
    out = np.transpose(a, order)
    return flip(out, [i for i, s in enumerate(signs) if s < 0])


def rot90(a: np.ndarray, k: int, plane=(0, 1)) -> np.ndarray:
    """k quarter turns in the plane of two spatial axes."""
    return np.rot90(a, k, axes=(SPATIAL[plane[0]], SPATIAL[plane[1]]))


def random_transform(rng: np.random.Generator):
    flips = tuple(i for i in range(3) if rng.random() < 0.5)
    return flips, ROTATIONS[int(rng.integers(len(ROTATIONS)))]


def apply_transform(a: np.ndarray, transform) -> np.ndarray:
    flips, rotation = transform
    return np.ascontiguousarray(rotate(flip(a, flips), rotation))


def augment(sample: BatchSample, rng: np.random.Generator) -> BatchSample:
    """Independent transform per patch; image and label get the same one."""
    s = sample.image.shape[-3:]
    if len(set(s)) != 1:
        raise ValueError(f"augment needs cubic patches, got {s}")
    images, labels = [], []
    for img, lab in zip(sample.image, sample.label):
        t = random_transform(rng)
        images.append(apply_transform(img, t))
        labels.append(apply_transform(lab, t))
    return BatchSample(np.stack(images), np.stack(labels))
