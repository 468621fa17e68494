"""Parameterised building blocks over the tensor core."""
from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..tensor import BNParams, PReLUParams, Tensor
from .params import ParameterStore

PRELU_INIT = 0.25


def he_normal(rng: np.random.Generator, shape, fan_in: int, slope: float = PRELU_INIT) -> np.ndarray:
    std = np.sqrt(2.0 / ((1.0 + slope ** 2) * fan_in))
    return rng.normal(0.0, std, size=shape)


class Conv:
    def __init__(self, store: ParameterStore, path: str, cin: int, cout: int, k: int,
                 rng: np.random.Generator, bias: bool = True):
        self.path, self.k = path, k
        self.weight = store.add(f"{path}.weight", he_normal(rng, (cout, cin, k, k, k), cin * k ** 3))
        self.bias = store.add(f"{path}.bias", np.zeros(cout)) if bias else None

    @classmethod
    def tied(cls, other: "Conv") -> "Conv":
        """A Conv reading the same weight and bias tensors as ``other``."""
        obj = cls.__new__(cls)
        obj.path, obj.k, obj.weight, obj.bias = other.path, other.k, other.weight, other.bias
        return obj

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv3d(x, self.weight, self.bias)


class BatchNorm:
    def __init__(self, store: ParameterStore, path: str, channels: int, eps: float = 1e-5,
                 momentum: float = 0.1):
        self.store, self.path = store, path
        self.gamma = store.add(f"{path}.gamma", np.ones(channels))
        self.beta = store.add(f"{path}.beta", np.zeros(channels))
        self.eps, self.momentum = eps, momentum

    def params(self) -> BNParams:
        return BNParams(self.gamma, self.beta,
                        self.store.get_buffer(f"{self.path}.running_mean"),
                        self.store.get_buffer(f"{self.path}.running_var"),
                        self.eps, self.momentum)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        p = self.params()
        y = T.batch_norm3d(x, p, training)
        if training:
            self.store.set_buffer(f"{self.path}.running_mean", p.running_mean)
            self.store.set_buffer(f"{self.path}.running_var", p.running_var)
        return y

    def set_identity(self, eps: float = 0.0) -> None:
        """Running mean 0, variance 1, unit scale, zero shift: eval mode becomes identity."""
        c = self.gamma.shape[0]
        self.gamma.data[:] = 1
        self.beta.data[:] = 0
        self.eps = eps
        self.store.set_buffer(f"{self.path}.running_mean", np.zeros(c))
        self.store.set_buffer(f"{self.path}.running_var", np.ones(c))


class PReLU:
    def __init__(self, store: ParameterStore, path: str, channels: int):
        self.slope = store.add(f"{path}.slope", np.full(channels, PRELU_INIT))

    def __call__(self, x: Tensor) -> Tensor:
        return T.prelu(x, PReLUParams(self.slope))


class ConvBNAct:
    """Conv -> BN -> PReLU."""

    def __init__(self, store, path, cin, cout, k, rng, conv: Conv | None = None):
        self.conv = conv if conv is not None else Conv(store, f"{path}.conv", cin, cout, k, rng)
        self.bn = BatchNorm(store, f"{path}.bn", cout)
        self.act = PReLU(store, f"{path}.act", cout)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return self.act(self.bn(self.conv(x), training))


class ResidualBlock:
    """Two 3x3x3 Conv-BN-PReLU layers plus a shortcut (1x1x1 conv + BN when widths differ)."""

    def __init__(self, store, path, cin, cout, rng):
        self.layer1 = ConvBNAct(store, f"{path}.layer1", cin, cout, 3, rng)
        self.layer2 = ConvBNAct(store, f"{path}.layer2", cout, cout, 3, rng)
        if cin != cout:
            self.proj = Conv(store, f"{path}.proj.conv", cin, cout, 1, rng)
            self.proj_bn = BatchNorm(store, f"{path}.proj.bn", cout)
        else:
            self.proj = None

    def branch(self, x: Tensor, training: bool) -> Tensor:
        return self.layer2(self.layer1(x, training), training)

    def shortcut(self, x: Tensor, training: bool) -> Tensor:
        return x if self.proj is None else self.proj_bn(self.proj(x), training)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return T.add(self.shortcut(x, training), self.branch(x, training))


class SupervisionHead:
    """1x1x1 conv to one channel followed by a sigmoid."""

    def __init__(self, store, path, cin, rng):
        self.conv = Conv(store, f"{path}.conv", cin, 1, 1, rng)

    def logits(self, x: Tensor) -> Tensor:
        return self.conv(x)

    def __call__(self, x: Tensor) -> Tensor:
        return T.sigmoid(self.conv(x))


class MixedKernelLayer:
    """Grouped convolution: channel group ``g`` is convolved with kernel size ``kernels[g]``.

    Each group maps ``group_width`` channels to ``group_width`` channels and
    is followed by its own BN and PReLU.  ``share`` reuses the conv tensors of
    another layer while keeping separate normalization.
    """

    def __init__(self, store, path, kernels, group_width, rng, share: "MixedKernelLayer | None" = None):
        self.group_width = group_width
        self.blocks = []
        for g, k in enumerate(kernels):
            conv = Conv.tied(share.blocks[g].conv) if share is not None else None
            self.blocks.append(ConvBNAct(store, f"{path}.group{g}_k{k}", group_width, group_width, k, rng, conv=conv))

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        parts = T.split_channels(x, [self.group_width] * len(self.blocks))
        return T.concat([blk(p, training) for blk, p in zip(self.blocks, parts)])


class AttentionModule:
    """Stage-wise attention refinement.

    ``A = sigmoid(conv1x1(layer2(layer1(F))))`` and
    ``F' = BN_gate(A * F) + BN_skip(F)``.
    """

    def __init__(self, store, path, channels, kernels, group_width, rng, share_layers: bool = True):
        if group_width * len(kernels) != channels:
            raise ValueError(
                f"attention: group_width {group_width} x {len(kernels)} kernels != {channels} channels")
        self.layer1 = MixedKernelLayer(store, f"{path}.layer1", kernels, group_width, rng)
        self.layer2 = MixedKernelLayer(store, f"{path}.layer2", kernels, group_width, rng,
                                       share=self.layer1 if share_layers else None)
        self.merge = Conv(store, f"{path}.merge", channels, 1, 1, rng)
        self.bn_gate = BatchNorm(store, f"{path}.bn_gate", channels)
        self.bn_skip = BatchNorm(store, f"{path}.bn_skip", channels)

    def gate(self, f: Tensor, training: bool) -> Tensor:
        return T.sigmoid(self.merge(self.layer2(self.layer1(f, training), training)))

    def combine(self, f: Tensor, a: Tensor, training: bool) -> Tensor:
        return T.add(self.bn_gate(T.mul(a, f), training), self.bn_skip(f, training))

    def __call__(self, f: Tensor, training: bool, gate: Tensor | None = None) -> tuple[Tensor, Tensor]:
        a = self.gate(f, training) if gate is None else gate
        return self.combine(f, a, training), a
