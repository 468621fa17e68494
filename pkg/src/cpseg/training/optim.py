"""Adam with coupled L2 weight decay, and the step learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..tensor import Tensor


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"non-finite gradient in {name!r}; optimizer step aborted")


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float, weight_decay: float = 0.0) -> None:
    """One bias-corrected Adam update; ``weight_decay * theta`` is added to the gradient.

    Tensors without a gradient are treated as having a zero gradient.  All
    gradients are validated before any parameter moves.
    """
    grads = {}
    for name, t in params.items():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)
        grads[name] = g
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, t in params.items():
        g = grads[name]
        if weight_decay:
            g = g + t.data.dtype.type(weight_decay) * t.data
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(t.data)
            v = np.zeros_like(t.data)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m.astype(t.dtype), v.astype(t.dtype)
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        t.data = (t.data - update).astype(t.dtype)


def lr_at(iteration: int, lr0: float = 1e-3, drops=(3000, 4500), factor: float = 0.1) -> float:
    """Piecewise-constant rate: ``lr0 * factor**k`` after the k-th drop milestone."""
    k = sum(1 for d in drops if iteration >= d)
    # round away the representation error of repeated 0.1 products
    return float(f"{lr0 * factor ** k:.12g}")
