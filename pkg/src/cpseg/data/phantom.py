"""Synthetic thin-shell phantoms standing in for cortical-plate MRI.

A folded spherical shell (dark, like the cortical plate on T2 images)
separates a bright interior (white-matter-like) from a brighter exterior
(CSF-like).  Partial voluming comes from a Gaussian blur applied before the
noise.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy import ndimage

from .volume import Volume


@dataclass
class Tissue:
    mean: float
    std: float = 0.0


@dataclass
class PhantomSpec:
    dims: tuple[int, int, int] = (64, 64, 64)
    spacing: tuple[float, float, float] = (0.8, 0.8, 0.8)
    center_offset_mm: tuple[float, float, float] = (0.0, 0.0, 0.0)
    radius_mm: float = 16.0
    thickness_mm: float = 2.8
    fold_amplitude_mm: float = 1.5
    fold_frequency: float = 3.0  # cycles across the sphere diameter
    fold_terms: int = 6
    inside: Tissue = field(default_factory=lambda: Tissue(0.80))
    shell: Tissue = field(default_factory=lambda: Tissue(0.40))
    outside: Tissue = field(default_factory=lambda: Tissue(1.00))
    blur_sigma_vox: float = 0.6
    noise_std: float = 0.03
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.inside, dict):
            self.inside = Tissue(**self.inside)
        if isinstance(self.shell, dict):
            self.shell = Tissue(**self.shell)
        if isinstance(self.outside, dict):
            self.outside = Tissue(**self.outside)
        self.dims = tuple(int(d) for d in self.dims)
        self.spacing = tuple(float(s) for s in self.spacing)
        self.center_offset_mm = tuple(float(c) for c in self.center_offset_mm)
        if not 0 < self.thickness_mm < self.radius_mm:
            raise ValueError("need 0 < thickness_mm < radius_mm")
        if self.fold_amplitude_mm < 0 or self.blur_sigma_vox < 0 or self.noise_std < 0:
            raise ValueError("amplitude, blur and noise must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def _fold_field(spec: PhantomSpec, rng: np.random.Generator):
    """Smooth random function on the unit sphere with values in [-1, 1]."""
    dirs = rng.normal(size=(spec.fold_terms, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    phases = rng.uniform(0, 2 * np.pi, spec.fold_terms)

    def f(u: np.ndarray) -> np.ndarray:
        acc = np.zeros(u.shape[:-1])
        for v, ph in zip(dirs, phases):
            acc += np.cos(np.pi * spec.fold_frequency * (u @ v) + ph)
        return acc / max(spec.fold_terms, 1)

    return f


def shell_geometry(spec: PhantomSpec, rng: np.random.Generator):
    """Per-voxel (radial distance, local mid-surface radius), both in mm."""
    sp = np.asarray(spec.spacing)
    center = (np.asarray(spec.dims) - 1) / 2.0 * sp + np.asarray(spec.center_offset_mm)
    grids = np.meshgrid(*[np.arange(n) * s for n, s in zip(spec.dims, sp)], indexing="ij")
    rel = np.stack(grids, axis=-1) - center
    rho = np.linalg.norm(rel, axis=-1)
    u = rel / np.maximum(rho, 1e-9)[..., None]
    fold = _fold_field(spec, rng)
    mid = spec.radius_mm + spec.fold_amplitude_mm * fold(u)
    return center, rho, mid


def gen_phantom(spec: PhantomSpec) -> tuple[Volume, Volume]:
    """(image, label) pair; bit-identical for a given spec and seed."""
    rng = np.random.default_rng(spec.seed)
    center, rho, mid = shell_geometry(spec, rng)
    reach = spec.radius_mm + spec.fold_amplitude_mm + spec.thickness_mm / 2
    sp = np.asarray(spec.spacing)
    lo = center - reach
    hi = center + reach
    extent = (np.asarray(spec.dims) - 1) * sp
    if np.any(lo < 0) or np.any(hi > extent):
        raise ValueError(f"phantom shell (reach {reach:.2f} mm around {center}) exceeds the volume")

    half = spec.thickness_mm / 2
    label = (np.abs(rho - mid) <= half).astype(np.uint8)
    inside = rho < mid - half
    outside = rho > mid + half

    img = np.empty(spec.dims)
    for mask, tissue in ((inside, spec.inside), (label.astype(bool), spec.shell), (outside, spec.outside)):
        n = int(mask.sum())
        img[mask] = tissue.mean + (tissue.std * rng.standard_normal(n) if tissue.std else 0.0)
    if spec.blur_sigma_vox > 0:
        img = ndimage.gaussian_filter(img, spec.blur_sigma_vox, mode="nearest")
    if spec.noise_std > 0:
        img = img + spec.noise_std * rng.standard_normal(img.shape)
    image = Volume(img.astype(np.float32), spec.spacing)
    return image, image.like(label)


@dataclass
class PhantomRanges:
    """Uniform sampling ranges used to draw a dataset of distinct phantoms."""

    dims: tuple[int, int, int] = (64, 64, 64)
    spacing: tuple[float, float, float] = (0.8, 0.8, 0.8)
    radius_mm: tuple[float, float] = (14.0, 18.0)
    thickness_mm: tuple[float, float] = (2.4, 3.2)
    fold_amplitude_mm: tuple[float, float] = (0.8, 2.2)
    fold_frequency: tuple[float, float] = (2.0, 4.0)
    center_jitter_mm: float = 2.0
    blur_sigma_vox: tuple[float, float] = (0.5, 0.8)
    noise_std: tuple[float, float] = (0.02, 0.05)

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomRanges":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown phantom range keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def sample_spec(ranges: PhantomRanges, seed: int) -> PhantomSpec:
    rng = np.random.default_rng([seed, 0x5EED])
    u = lambda r: float(rng.uniform(*r))  # noqa: E731
    return PhantomSpec(
        dims=tuple(ranges.dims),
        spacing=tuple(ranges.spacing),
        center_offset_mm=tuple(float(c) for c in rng.uniform(-1, 1, 3) * ranges.center_jitter_mm),
        radius_mm=u(ranges.radius_mm),
        thickness_mm=u(ranges.thickness_mm),
        fold_amplitude_mm=u(ranges.fold_amplitude_mm),
        fold_frequency=u(ranges.fold_frequency),
        blur_sigma_vox=u(ranges.blur_sigma_vox),
        noise_std=u(ranges.noise_std),
        seed=seed,
    )
