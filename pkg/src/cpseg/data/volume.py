"""3-D scalar volume with physical geometry."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_SPACING = (0.8, 0.8, 0.8)


def _f32(a) -> np.ndarray:
    # geometry is stored at the precision the file format holds
    return np.asarray(a, dtype=np.float32).astype(np.float64)


@dataclass(eq=False)
class Volume:
    """Voxel array indexed ``[i, j, k]`` with spacing (mm) and a voxel-to-world affine."""

    data: np.ndarray
    spacing: tuple[float, float, float] = DEFAULT_SPACING
    affine: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ValueError(f"Volume needs a 3-D array, got shape {self.data.shape}")
        sp = _f32(self.spacing)
        if sp.shape != (3,) or np.any(sp <= 0):
            raise ValueError(f"spacing must be three positive values, got {self.spacing}")
        self.spacing = tuple(float(s) for s in sp)
        if self.affine is None:
            self.affine = np.diag([*self.spacing, 1.0])
        self.affine = _f32(self.affine)
        if self.affine.shape != (4, 4):
            raise ValueError("affine must be 4x4")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    def like(self, data: np.ndarray) -> "Volume":
        """A volume with the same geometry holding ``data``."""
        return Volume(data, self.spacing, self.affine.copy())

    def same_geometry(self, other: "Volume") -> bool:
        return self.dims == other.dims and np.allclose(self.spacing, other.spacing)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Volume):
            return NotImplemented
        return (self.data.dtype == other.data.dtype and np.array_equal(self.data, other.data)
                and self.spacing == other.spacing and np.array_equal(self.affine, other.affine))
