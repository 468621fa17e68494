"""Overlap and surface-distance metrics on binary masks, distances in mm."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from ..data.volume import Volume

# 6-connectivity structuring element
SIX = ndimage.generate_binary_structure(3, 1)


class EmptySurfaceError(ValueError):
    """A distance metric was asked about an empty mask."""


def _mask(m) -> tuple[np.ndarray, tuple[float, float, float]]:
    if isinstance(m, Volume):
        return m.data > 0, m.spacing
    return np.asarray(m) > 0, (1.0, 1.0, 1.0)


def _pair(a, b):
    ma, sa = _mask(a)
    mb, sb = _mask(b)
    if ma.shape != mb.shape:
        raise ValueError(f"mask dims differ: {ma.shape} vs {mb.shape}")
    if not np.allclose(sa, sb):
        raise ValueError(f"mask spacings differ: {sa} vs {sb}")
    return ma, mb, sa


def dice(a, b) -> float:
    """2|a & b| / (|a| + |b|); two empty masks score 1."""
    ma, mb, _ = _pair(a, b)
    total = int(ma.sum()) + int(mb.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(ma, mb).sum()) / total


@dataclass
class SurfacePoints:
    voxels: np.ndarray  # (n, 3) integer indices
    coords: np.ndarray  # (n, 3) voxel centres in mm
    shape: tuple[int, int, int]

    def __len__(self) -> int:
        return len(self.voxels)


def surface_mask(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels with a background 6-neighbour; outside the volume is background."""
    mask = np.asarray(mask, dtype=bool)
    inner = ndimage.binary_erosion(mask, structure=SIX, border_value=0)
    return mask & ~inner


def extract_surface(mask, spacing=None) -> SurfacePoints:
    m, sp = _mask(mask)
    if spacing is not None:
        sp = tuple(float(s) for s in spacing)
    vox = np.argwhere(surface_mask(m))
    return SurfacePoints(vox, vox * np.asarray(sp, dtype=np.float64), m.shape)


def directed_distances(src: SurfacePoints, dst: SurfacePoints) -> np.ndarray:
    """Distance (mm) from every ``src`` point to its nearest ``dst`` point."""
    if len(dst) == 0:
        raise EmptySurfaceError("directed_distances: destination surface is empty")
    if len(src) == 0:
        return np.zeros(0)
    d, _ = cKDTree(dst.coords).query(src.coords, k=1)
    return np.asarray(d, dtype=np.float64)


def _surfaces(a, b):
    ma, mb, sp = _pair(a, b)
    if not ma.any() or not mb.any():
        raise EmptySurfaceError("surface distance needs two non-empty masks")
    return extract_surface(ma, sp), extract_surface(mb, sp)


def percentile95(d: np.ndarray) -> float:
    """Linear interpolation between order statistics."""
    return float(np.percentile(d, 95, method="linear"))


def hd95(a, b) -> float:
    """max of the two directed 95th-percentile surface distances."""
    sa, sb = _surfaces(a, b)
    return max(percentile95(directed_distances(sa, sb)), percentile95(directed_distances(sb, sa)))


def hausdorff(a, b) -> float:
    sa, sb = _surfaces(a, b)
    return max(directed_distances(sa, sb).max(), directed_distances(sb, sa).max())


def asd(a, b, symmetric: bool = True) -> float:
    """Average surface distance; the asymmetric form averages a->b only."""
    sa, sb = _surfaces(a, b)
    dab = directed_distances(sa, sb)
    if not symmetric:
        return float(dab.mean())
    dba = directed_distances(sb, sa)
    return float((dab.sum() + dba.sum()) / (len(dab) + len(dba)))


def surface_error_map(pred, gt) -> Volume:
    """Float volume holding d(p, gt surface) on the prediction surface and 0 elsewhere."""
    sp_, sg = _surfaces(pred, gt)
    d = directed_distances(sp_, sg)
    out = np.zeros(sp_.shape, dtype=np.float32)
    out[tuple(sp_.voxels.T)] = d
    if isinstance(pred, Volume):
        return pred.like(out)
    return Volume(out, (1.0, 1.0, 1.0))
