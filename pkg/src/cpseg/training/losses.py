"""Weighted binary cross-entropy and the deep-supervision total."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tensor as T
from ..network.model import ForwardOutputs, Supervision
from ..tensor import ShapeError, Tensor
from ..tensor.core import make_result

P_CLAMP = 1e-7
ALPHA_RANGE = (1.0, 100.0)


def wbce_loss(p: Tensor, g: np.ndarray | Tensor, alpha: float) -> Tensor:
    """``-(1/N) * sum(alpha*g*log p + (1-g)*log(1-p))`` over every voxel of the batch.

    ``p`` is clamped to ``[1e-7, 1 - 1e-7]`` before the logarithms; the
    gradient is evaluated at the clamped value (a saturated sigmoid still
    receives a signal).
    """
    gd = g.data if isinstance(g, Tensor) else np.asarray(g)
    if gd.shape != p.shape:
        raise ShapeError("wbce_loss", "shape", p.shape, gd.shape)
    if not alpha > 0:
        raise ValueError(f"wbce_loss: alpha must be positive, got {alpha}")
    pd = p.data
    dt = pd.dtype.type
    pc = np.clip(pd, dt(P_CLAMP), dt(1 - P_CLAMP))
    gd = gd.astype(pd.dtype, copy=False)
    n = pd.size
    a = dt(alpha)
    loss = -(a * gd * np.log(pc) + (1 - gd) * np.log1p(-pc)).sum(dtype=np.float64) / n

    def back(grad):
        return (grad * (-(a * gd / pc) + (1 - gd) / (1 - pc)) / dt(n),)

    return make_result(np.asarray(loss, dtype=pd.dtype), "wbce_loss", (p,), back)


def alpha_for_batch(g) -> float:
    """Negative/positive voxel ratio of the mini-batch, clamped to [1, 100]; 1 without positives."""
    gd = g.data if isinstance(g, Tensor) else np.asarray(g)
    pos = int(np.count_nonzero(gd))
    if pos == 0:
        return 1.0
    neg = gd.size - pos
    return float(np.clip(neg / pos, *ALPHA_RANGE))


@dataclass
class SupervisionWeights:
    backbone: tuple[float, ...] = (0.8, 0.7, 0.6, 0.5)
    refine: tuple[float, ...] = (0.8, 0.7, 0.6, 0.5)
    final: float = 1.0


def signal_weights(strategy: Supervision | str, weights: SupervisionWeights, n_stages: int) -> dict[str, float]:
    """Supervised signal name -> weight, in loss-trace order."""
    strategy = Supervision.parse(strategy)
    if len(weights.backbone) != n_stages or len(weights.refine) != n_stages:
        raise ValueError(f"supervision weights need {n_stages} entries per branch, got "
                         f"{len(weights.backbone)} and {len(weights.refine)}")
    out = {}
    if strategy is not Supervision.OUTPUT_ONLY:
        out.update({f"backbone_{i + 1}": weights.backbone[i] for i in range(n_stages)})
    if strategy is Supervision.SAF:
        out.update({f"attentive_feature_{i + 1}": weights.refine[i] for i in range(n_stages)})
    elif strategy is Supervision.SAM:
        out.update({f"attention_map_{i + 1}": weights.refine[i] for i in range(n_stages)})
    out["final"] = weights.final
    return out


def signal_names(strategy: Supervision | str, n_stages: int) -> list[str]:
    return list(signal_weights(strategy, SupervisionWeights((1.0,) * n_stages, (1.0,) * n_stages), n_stages))


def weighted_sum(losses: dict[str, Tensor], weights: dict[str, float]) -> Tensor:
    """``sum_k weights[k] * losses[k]`` over the supervised signals."""
    total = None
    for name, w in weights.items():
        term = T.scale(losses[name], w)
        total = term if total is None else T.add(total, term)
    return total


def signal_tensors(outputs: ForwardOutputs, strategy: Supervision | str) -> dict[str, Tensor]:
    strategy = Supervision.parse(strategy)
    out = {}
    if strategy is not Supervision.OUTPUT_ONLY:
        out.update({f"backbone_{i + 1}": p for i, p in enumerate(outputs.backbone_probs)})
    if strategy is Supervision.SAF:
        out.update({f"attentive_feature_{i + 1}": p for i, p in enumerate(outputs.refine_probs)})
    elif strategy is Supervision.SAM:
        if len(outputs.attention_maps) != len(outputs.backbone_probs):
            raise ValueError("attention-map supervision needs one attention map per stage")
        out.update({f"attention_map_{i + 1}": a for i, a in enumerate(outputs.attention_maps)})
    out["final"] = outputs.final_prob
    return out


def total_loss(outputs: ForwardOutputs, g, strategy: Supervision | str, weights: SupervisionWeights,
               alpha: float) -> tuple[Tensor, dict[str, float]]:
    """Deep-supervision loss; returns (total, per-signal unweighted values)."""
    w = signal_weights(strategy, weights, len(outputs.backbone_probs))
    probs = signal_tensors(outputs, strategy)
    losses = {name: wbce_loss(probs[name], g, alpha) for name in w}
    return weighted_sum(losses, w), {k: v.item() for k, v in losses.items()}
