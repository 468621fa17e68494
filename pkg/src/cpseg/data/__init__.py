"""Volumes, NIfTI-1 I/O, synthetic phantoms and patch handling."""
from .nifti import NiftiError, read_volume, write_volume
from .patches import PatchGrid, binarize, extract_patches, fuse_predictions, normalize
from .phantom import PhantomRanges, PhantomSpec, Tissue, gen_phantom, sample_spec
from .volume import Volume

__all__ = [
    "NiftiError", "PatchGrid", "PhantomRanges", "PhantomSpec", "Tissue", "Volume", "binarize",
    "extract_patches", "fuse_predictions", "gen_phantom", "normalize", "read_volume",
    "sample_spec", "write_volume",
]
