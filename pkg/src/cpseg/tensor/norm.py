"""Batch normalization and parametric ReLU."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ShapeError, Tensor, make_result

_RED = (0, 2, 3, 4)


@dataclass
class BNParams:
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray | None = None  # None until the first training batch
    running_var: np.ndarray | None = None
    eps: float = 1e-5
    momentum: float = 0.1

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError("eps must be non-negative")
        if not 0.0 < self.momentum < 1.0:
            raise ValueError("momentum must lie in (0, 1)")

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


def _bcast(v: np.ndarray) -> np.ndarray:
    return v.reshape(1, -1, 1, 1, 1)


def batch_norm3d(x: Tensor, params: BNParams, training: bool) -> Tensor:
    """Per-channel normalization over (N, D, H, W).

    Training mode uses the batch statistics and updates the running ones by
    an exponential moving average (unbiased variance); evaluation mode uses
    the running statistics.
    """
    c = params.channels
    if x.ndim != 5 or x.shape[1] != c:
        raise ShapeError("batch_norm3d", "channels", c, x.shape[1] if x.ndim > 1 else x.shape)
    xd = x.data
    gamma, beta = params.gamma, params.beta
    dt = xd.dtype.type
    if training:
        m = xd.size // c
        mu = xd.mean(axis=_RED, dtype=np.float64)
        var = xd.var(axis=_RED, dtype=np.float64)
        rm = np.zeros(c) if params.running_mean is None else params.running_mean
        rv = np.ones(c) if params.running_var is None else params.running_var
        mom = params.momentum
        unbiased = var * m / max(m - 1, 1)
        params.running_mean = ((1 - mom) * rm + mom * mu).astype(np.float32)
        params.running_var = ((1 - mom) * rv + mom * unbiased).astype(np.float32)
    else:
        if params.running_mean is None or params.running_var is None:
            raise RuntimeError("batch_norm3d: eval mode needs initialized running statistics")
        m = None
        mu = params.running_mean.astype(np.float64)
        var = params.running_var.astype(np.float64)
    invstd = (1.0 / np.sqrt(var + params.eps)).astype(xd.dtype)
    xhat = (xd - _bcast(mu.astype(xd.dtype))) * _bcast(invstd)
    y = xhat * _bcast(gamma.data) + _bcast(beta.data)

    def back(g):
        gg = (g * xhat).sum(axis=_RED) if gamma.requires_grad else None
        gbeta = g.sum(axis=_RED) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = g * _bcast(gamma.data)
            if m is None:
                gx = dxhat * _bcast(invstd)
            else:
                s1 = dxhat.sum(axis=_RED)
                s2 = (dxhat * xhat).sum(axis=_RED)
                gx = (dxhat - _bcast(s1 / dt(m)) - xhat * _bcast(s2 / dt(m))) * _bcast(invstd)
        return gx, gg, gbeta

    return make_result(y.astype(xd.dtype, copy=False), "batch_norm3d", (x, gamma, beta), back)


@dataclass
class PReLUParams:
    slope: Tensor  # one learnable slope per channel


def prelu(x: Tensor, params: PReLUParams) -> Tensor:
    a = params.slope
    c = a.shape[0]
    if x.ndim < 2 or x.shape[1] != c:
        raise ShapeError("prelu", "channels", c, x.shape[1] if x.ndim > 1 else x.shape)
    shape = (1, c) + (1,) * (x.ndim - 2)
    xd = x.data
    pos = xd > 0
    ab = a.data.reshape(shape)
    y = np.where(pos, xd, ab * xd)

    def back(g):
        gx = np.where(pos, g, g * ab) if x.requires_grad else None
        ga = None
        if a.requires_grad:
            axes = tuple(i for i in range(x.ndim) if i != 1)
            ga = np.where(pos, 0, g * xd).sum(axis=axes).astype(a.dtype)
        return gx, ga

    return make_result(y, "prelu", (x, a), back)
