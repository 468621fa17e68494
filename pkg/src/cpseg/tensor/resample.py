"""Trilinear upsampling with half-pixel sample centres."""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .core import ShapeError, Tensor, make_result


@lru_cache(maxsize=64)
def interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) linear interpolation weights.

    Output sample ``i`` reads source coordinate ``(i + 0.5) * n_in / n_out - 0.5``
    clamped to ``[0, n_in - 1]``.
    """
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1 - frac)
    np.add.at(m, (rows, hi), frac)
    m.setflags(write=False)
    return m


def _apply(a: np.ndarray, mats) -> np.ndarray:
    for axis, m in zip((2, 3, 4), mats):
        if m is None:
            continue
        a = np.moveaxis(np.tensordot(a, m.astype(a.dtype), axes=([axis], [1])), -1, axis)
    return np.ascontiguousarray(a)


def trilinear_upsample(x: Tensor, size) -> Tensor:
    """Resample the spatial axes of ``x`` (N, C, D, H, W) up to ``size``."""
    size = tuple(int(s) for s in size)
    if x.ndim != 5 or len(size) != 3:
        raise ShapeError("trilinear_upsample", "rank", 5, x.ndim)
    for ax, (i, o) in enumerate(zip(x.shape[2:], size)):
        if o < i:
            raise ShapeError("trilinear_upsample", f"spatial axis {ax} (no downsampling)", f">={i}", o)
    mats = [None if i == o else interp_matrix(i, o) for i, o in zip(x.shape[2:], size)]
    if all(m is None for m in mats):
        return make_result(x.data.copy(), "trilinear_upsample", (x,), lambda g: (g,))
    y = _apply(x.data, mats)

    def back(g):
        return (_apply(g, [None if m is None else m.T for m in mats]),)

    return make_result(y, "trilinear_upsample", (x,), back)
