"""Size-preserving 3-D convolution (cross-correlation) with zero padding.

Kernels larger than one voxel are evaluated in the frequency domain.  The
transform length on each axis is at least ``D + (k - 1) // 2``, which keeps
circular wrap-around confined to the zero-extended region for the forward
pass and both gradient passes, and at least ``k`` so every kernel tap has a
distinct lag.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .core import ShapeError, Tensor, make_result

ALLOWED_KERNELS = (1, 3, 5, 7, 9)
_AXES = (2, 3, 4)


@dataclass
class ConvParams:
    weight: Tensor  # (out, in, k, k, k)
    bias: Tensor | None = None

    @property
    def kernel_size(self) -> int:
        return self.weight.shape[-1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]


def _check(x: Tensor, w: Tensor, b: Tensor | None) -> int:
    if x.ndim != 5:
        raise ShapeError("conv3d", "input rank", 5, x.ndim)
    if w.ndim != 5:
        raise ShapeError("conv3d", "weight rank", 5, w.ndim)
    k = w.shape[2]
    if w.shape[3] != k or w.shape[4] != k:
        raise ShapeError("conv3d", "kernel (must be cubic)", (k, k, k), w.shape[2:])
    if k not in ALLOWED_KERNELS:
        raise ShapeError("conv3d", "kernel size", ALLOWED_KERNELS, k)
    if w.shape[1] != x.shape[1]:
        raise ShapeError("conv3d", "in_channels", w.shape[1], x.shape[1])
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError("conv3d", "bias length", w.shape[0], b.shape)
    return k


def _contract(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """c[p, q] = sum_r a[p, r] * b[r, q] at every frequency (trailing axes).

    Looping over the (small) contracted axis beats einsum here.
    """
    out = a[:, 0, None] * b[None, 0]
    for r in range(1, a.shape[1]):
        out += a[:, r, None] * b[None, r]
    return out


def conv3d(x: Tensor, params: ConvParams | Tensor, bias: Tensor | None = None) -> Tensor:
    """Cross-correlate ``x`` (N, Cin, D, H, W) with ``weight`` (Cout, Cin, k, k, k)."""
    if isinstance(params, ConvParams):
        w, b = params.weight, params.bias
    else:
        w, b = params, bias
    k = _check(x, w, b)
    if k == 1:
        return _conv1(x, w, b)

    xd, wd = x.data, w.data
    n, cin, d, h, wid = x.shape
    p = (k - 1) // 2
    spatial = (d, h, wid)
    L = tuple(sfft.next_fast_len(max(s + p, k), real=True) for s in spatial)
    Xf = sfft.rfftn(xd, s=L, axes=_AXES)
    Wf = sfft.rfftn(wd, s=L, axes=_AXES)
    corr = sfft.irfftn(_contract(Xf, Wf.conj().swapaxes(0, 1)), s=L, axes=_AXES)
    y = np.roll(corr, (p, p, p), axis=_AXES)[:, :, :d, :h, :wid]
    if b is not None:
        y = y + b.data[None, :, None, None, None]
    y = np.ascontiguousarray(y, dtype=xd.dtype)

    def back(g):
        Gf = sfft.rfftn(g, s=L, axes=_AXES)
        gx = gw = gb = None
        if x.requires_grad:
            full = sfft.irfftn(_contract(Gf, Wf), s=L, axes=_AXES)
            gx = np.ascontiguousarray(full[:, :, p:p + d, p:p + h, p:p + wid], dtype=xd.dtype)
        if w.requires_grad:
            r = sfft.irfftn(_contract(Gf.conj().swapaxes(0, 1), Xf), s=L, axes=_AXES)
            gw = np.ascontiguousarray(
                np.roll(r, (p, p, p), axis=_AXES)[:, :, :k, :k, :k], dtype=wd.dtype)
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3, 4))
        return gx, gw, gb

    inputs = (x, w) if b is None else (x, w, b)
    return make_result(y, "conv3d", inputs, back)


def _conv1(x: Tensor, w: Tensor, b: Tensor | None) -> Tensor:
    xd = x.data
    wm = w.data[:, :, 0, 0, 0]
    y = np.einsum("oi,nixyz->noxyz", wm, xd, optimize=True)
    if b is not None:
        y += b.data[None, :, None, None, None]

    def back(g):
        gx = np.einsum("oi,noxyz->nixyz", wm, g, optimize=True) if x.requires_grad else None
        gw = None
        if w.requires_grad:
            gw = np.einsum("noxyz,nixyz->oi", g, xd, optimize=True)[:, :, None, None, None]
        gb = g.sum(axis=(0, 2, 3, 4)) if b is not None and b.requires_grad else None
        return gx, gw, gb

    inputs = (x, w) if b is None else (x, w, b)
    return make_result(y, "conv3d", inputs, back)
