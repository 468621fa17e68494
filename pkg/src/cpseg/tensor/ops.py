"""Pointwise and structural operations.

Elementwise ``add``/``mul`` accept equal shapes, or a channel axis of size 1
on either operand (the gate-times-features product).  Nothing else
broadcasts.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.special import expit

from .core import ShapeError, Tensor, make_result


def _check_pair(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape:
        return
    if a.ndim != b.ndim:
        raise ShapeError(op, "rank", a.ndim, b.ndim)
    for ax, (m, n) in enumerate(zip(a.shape, b.shape)):
        if m != n and not (ax == 1 and 1 in (m, n)):
            raise ShapeError(op, f"axis {ax}", m, n)


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return g.sum(axis=1, keepdims=True)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_pair("add", a, b)

    def back(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return make_result(a.data + b.data, "add", (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product."""
    _check_pair("mul", a, b)
    x, y = a.data, b.data

    def back(g):
        return _reduce_to(g * y, a.shape), _reduce_to(g * x, b.shape)

    return make_result(x * y, "mul", (a, b), back)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return make_result(a.data * a.dtype.type(c), "scale", (a,), lambda g: (g * g.dtype.type(c),))


def shift(a: Tensor, c: float) -> Tensor:
    return make_result(a.data + a.dtype.type(c), "shift", (a,), lambda g: (g,))


def sigmoid(a: Tensor) -> Tensor:
    s = expit(a.data)

    def back(g):
        return (g * s * (1 - s),)

    return make_result(s, "sigmoid", (a,), back)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along the channel axis."""
    tensors = list(tensors)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref):
            raise ShapeError("concat", "rank", len(ref), t.ndim)
        for ax, (m, n) in enumerate(zip(ref, t.shape)):
            if ax != axis and m != n:
                raise ShapeError("concat", f"axis {ax}", m, n)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), "concat", tensors, back)


def split_channels(a: Tensor, sizes: Sequence[int]) -> list[Tensor]:
    """Inverse of :func:`concat`: slice ``a`` into channel groups."""
    if sum(sizes) != a.shape[1]:
        raise ShapeError("split_channels", "channels", sum(sizes), a.shape[1])
    out, start = [], 0
    for size in sizes:
        sl = slice(start, start + size)

        def back(g, sl=sl):
            full = np.zeros_like(a.data)
            full[:, sl] = g
            return (full,)

        out.append(make_result(a.data[:, sl], "split_channels", (a,), back))
        start += size
    return out


def max_pool2(a: Tensor) -> Tensor:
    """2x2x2 max pooling with stride 2; gradient goes to the first argmax."""
    n, c, d, h, w = a.shape
    if d % 2 or h % 2 or w % 2:
        raise ShapeError("max_pool2", "spatial size (must be even)", "even", (d, h, w))
    win = (
        a.data.reshape(n, c, d // 2, 2, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 6, 3, 5, 7)
        .reshape(n, c, d // 2, h // 2, w // 2, 8)
    )
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def back(g):
        gw = np.zeros(win.shape, dtype=g.dtype)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gx = (
            gw.reshape(n, c, d // 2, h // 2, w // 2, 2, 2, 2)
            .transpose(0, 1, 2, 5, 3, 6, 4, 7)
            .reshape(n, c, d, h, w)
        )
        return (gx,)

    return make_result(out, "max_pool2", (a,), back)


def tsum(a: Tensor) -> Tensor:
    shape = a.shape
    return make_result(a.data.sum(dtype=a.dtype).reshape(()), "sum", (a,),
                       lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a: Tensor) -> Tensor:
    shape, n = a.shape, a.data.size
    return make_result(a.data.mean(dtype=a.dtype).reshape(()), "mean", (a,),
                       lambda g: (np.full(shape, g / n, dtype=g.dtype),))
