"""Central finite-difference checks of every differentiable operation, in float64.

Each suite builds a scalar objective ``sum(R * f(inputs))`` with a fixed
random projection ``R`` and compares the reverse-mode gradient with central
differences for every input (sampled coordinates for large tensors).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .network import layers as L
from .network.model import ForwardOutputs
from .network.params import ParameterStore
from .training import losses

STEP = 1e-4
# modules contain PReLU kinks; a smaller step keeps pre-activations from crossing them
MODULE_STEP = 1e-5
TOLERANCE = 1e-5
# gradients that vanish exactly (a conv bias feeding batch norm) are compared absolutely
ABS_FLOOR = 1e-3


@dataclass
class CheckResult:
    name: str
    kind: str  # "op" or "module"
    max_rel_error: float
    n_checked: int

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error < TOLERANCE)


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error ``|a - n| / max(|a|, |n|, ABS_FLOOR)``."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), ABS_FLOOR)
    return float(np.linalg.norm(analytic - numeric) / scale)


def check_gradients(name: str, fn: Callable[[], T.Tensor], inputs: dict[str, T.Tensor],
                    rng: np.random.Generator, max_coords: int = 24, step: float = STEP,
                    kind: str = "op") -> CheckResult:
    """Compare reverse-mode and finite-difference gradients of ``fn`` w.r.t. ``inputs``.

    ``fn`` closes over the input tensors and is re-evaluated after each
    in-place perturbation.
    """
    with T.default_dtype(np.float64):
        out = fn()
        proj = T.Tensor(rng.standard_normal(out.shape))

        def objective() -> T.Tensor:
            o = fn()
            return o if o.ndim == 0 else T.tsum(T.mul(o, proj))

        for t in inputs.values():
            t.grad = None
            t.requires_grad = True
        T.backward(objective())
        worst, count = 0.0, 0
        with T.no_grad():
            for key, t in inputs.items():
                analytic = np.zeros(t.shape) if t.grad is None else t.grad.copy()
                flat = t.data.reshape(-1)
                idx = np.arange(flat.size)
                if flat.size > max_coords:
                    idx = rng.choice(flat.size, max_coords, replace=False)
                numeric = np.empty(len(idx))
                for j, i in enumerate(idx):
                    orig = flat[i]
                    flat[i] = orig + step
                    fp = objective().item()
                    flat[i] = orig - step
                    fm = objective().item()
                    flat[i] = orig
                    numeric[j] = (fp - fm) / (2 * step)
                worst = max(worst, rel_error(analytic.reshape(-1)[idx], numeric))
                count += len(idx)
    return CheckResult(name, kind, worst, count)


def _t(a) -> T.Tensor:
    return T.Tensor(np.asarray(a, dtype=np.float64), requires_grad=True, dtype=np.float64)


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)


def _store64(store: ParameterStore, rng) -> dict[str, T.Tensor]:
    store.cast(np.float64)
    for t in store.params.values():
        # move BN scales, shifts and PReLU slopes off their symmetric initial values
        t.data += 0.1 * rng.standard_normal(t.shape)
    return dict(store.params)


# --- operation suites -----------------------------------------------------------

def suite_conv3d(rng):
    """Kernel sizes 3, 5 and 1 (the FFT and pointwise paths), each with its own projection."""
    x = _t(rng.standard_normal((2, 2, 5, 6, 4)))
    w3 = _t(rng.standard_normal((3, 2, 3, 3, 3)) * 0.3)
    w5 = _t(rng.standard_normal((2, 2, 5, 5, 5)) * 0.1)
    w1 = _t(rng.standard_normal((2, 2, 1, 1, 1)))
    b = _t(rng.standard_normal(3))
    r3, r5, r1 = (T.Tensor(rng.standard_normal((2, c, 5, 6, 4))) for c in (3, 2, 2))

    def fn():
        terms = [T.tsum(T.mul(T.conv3d(x, w, bias), r))
                 for w, bias, r in ((w3, b, r3), (w5, None, r5), (w1, None, r1))]
        return T.add(T.add(terms[0], terms[1]), terms[2])
    return fn, {"x": x, "weight_k3": w3, "weight_k5": w5, "weight_k1": w1, "bias": b}


def _bn(rng, c):
    p = T.BNParams(_t(1 + 0.2 * rng.standard_normal(c)), _t(0.2 * rng.standard_normal(c)))
    return p


def suite_bn_train(rng):
    x = _t(rng.standard_normal((2, 3, 3, 4, 3)) * 2 + 1)
    p = _bn(rng, 3)
    return lambda: T.batch_norm3d(x, p, training=True), {"x": x, "gamma": p.gamma, "beta": p.beta}


def suite_bn_eval(rng):
    x = _t(rng.standard_normal((2, 3, 3, 4, 3)))
    p = _bn(rng, 3)
    p.running_mean = rng.standard_normal(3)
    p.running_var = rng.uniform(0.5, 2.0, 3)
    return lambda: T.batch_norm3d(x, p, training=False), {"x": x, "gamma": p.gamma, "beta": p.beta}


def suite_prelu(rng):
    x = _t(_away_from_zero(rng, (2, 3, 3, 3, 3)))
    a = _t(rng.uniform(0.05, 0.5, 3))
    return lambda: T.prelu(x, T.PReLUParams(a)), {"x": x, "slope": a}


def suite_upsample(rng):
    x = _t(rng.standard_normal((2, 2, 2, 3, 4)))
    return lambda: T.trilinear_upsample(x, (4, 6, 7)), {"x": x}


def suite_add(rng):
    a, b = _t(rng.standard_normal((2, 3, 2, 2, 2))), _t(rng.standard_normal((2, 3, 2, 2, 2)))
    return lambda: T.add(a, b), {"a": a, "b": b}


def suite_mul(rng):
    # channel broadcast, as used by the attention gate
    a, b = _t(rng.standard_normal((2, 1, 2, 3, 2))), _t(rng.standard_normal((2, 3, 2, 3, 2)))
    return lambda: T.mul(a, b), {"a": a, "b": b}


def suite_sigmoid(rng):
    x = _t(rng.standard_normal((2, 2, 3, 3, 3)) * 2)
    return lambda: T.sigmoid(x), {"x": x}


def suite_concat(rng):
    a, b = _t(rng.standard_normal((2, 2, 2, 3, 2))), _t(rng.standard_normal((2, 1, 2, 3, 2)))
    return lambda: T.concat([a, b]), {"a": a, "b": b}


def suite_split(rng):
    x = _t(rng.standard_normal((2, 5, 2, 2, 2)))
    proj = rng.standard_normal(3)

    def fn():
        parts = T.split_channels(x, [2, 3])
        # differing weights keep both outputs in the objective
        return T.add(T.scale(parts[0], proj[0]), T.scale(T.split_channels(parts[1], [2, 1])[0], proj[1]))
    return fn, {"x": x}


def suite_maxpool(rng):
    # distinct values keep the argmax away from ties
    n = 2 * 2 * 4 * 4 * 6
    x = _t(rng.permutation(n).reshape(2, 2, 4, 4, 6) * 0.01)
    return lambda: T.max_pool2(x), {"x": x}


def suite_scale_shift_mean(rng):
    x = _t(rng.standard_normal((2, 2, 2, 2, 2)))
    return lambda: T.mean(T.shift(T.scale(T.mul(x, x), 0.7), 0.3)), {"x": x}


# --- module suites ------------------------------------------------------------------

def suite_residual_block(rng):
    store = ParameterStore()
    blk = L.ResidualBlock(store, "rb", 2, 3, rng)
    params = _store64(store, rng)
    x = _t(rng.standard_normal((2, 2, 4, 4, 4)))
    return lambda: blk(x, True), {"x": x, **params}


def suite_attention_module(rng):
    store = ParameterStore()
    mod = L.AttentionModule(store, "att", 4, [3, 5], 2, rng)
    params = _store64(store, rng)
    x = _t(rng.standard_normal((2, 4, 5, 5, 5)))
    return lambda: mod(x, True)[0], {"x": x, **params}


def suite_supervision_head(rng):
    store = ParameterStore()
    head = L.SupervisionHead(store, "head", 3, rng)
    params = _store64(store, rng)
    x = _t(rng.standard_normal((2, 3, 3, 3, 3)))
    return lambda: head(x), {"x": x, **params}


def suite_wbce(rng):
    p = _t(rng.uniform(0.05, 0.95, (2, 1, 3, 3, 3)))
    g = (rng.random(p.shape) < 0.3).astype(np.float64)
    return lambda: losses.wbce_loss(p, g, 2.5), {"p": p}


def suite_total_loss(rng):
    shape = (2, 1, 3, 3, 3)
    g = (rng.random(shape) < 0.4).astype(np.float64)
    probs = {k: _t(rng.uniform(0.05, 0.95, shape)) for k in
             ["final", "b1", "b2", "b3", "b4", "r1", "r2", "r3", "r4"]}
    outs = ForwardOutputs(probs["final"], [probs[f"b{i}"] for i in range(1, 5)],
                          [probs[f"r{i}"] for i in range(1, 5)], [])
    w = losses.SupervisionWeights((0.8, 0.7, 0.6, 0.5), (0.8, 0.7, 0.6, 0.5), 1.0)
    return lambda: losses.total_loss(outs, g, "saf", w, 3.0)[0], probs


OPS: dict[str, Callable] = {
    "conv3d": suite_conv3d,
    "batch_norm_train": suite_bn_train,
    "batch_norm_eval": suite_bn_eval,
    "prelu": suite_prelu,
    "trilinear_upsample": suite_upsample,
    "add": suite_add,
    "mul": suite_mul,
    "sigmoid": suite_sigmoid,
    "concat": suite_concat,
    "split_channels": suite_split,
    "max_pool2": suite_maxpool,
    "scale_shift_mean": suite_scale_shift_mean,
    "wbce": suite_wbce,
    "total_loss": suite_total_loss,
}
MODULES: dict[str, Callable] = {
    "residual_block": suite_residual_block,
    "attention_module": suite_attention_module,
    "supervision_head": suite_supervision_head,
}


def run_gradcheck(names=None, seed: int = 0, max_coords: int = 24) -> list[CheckResult]:
    suites = [(n, f, "op") for n, f in OPS.items()] + [(n, f, "module") for n, f in MODULES.items()]
    if names is not None:
        unknown = set(names) - {n for n, _, _ in suites}
        if unknown:
            raise KeyError(f"unknown gradcheck suites: {sorted(unknown)}")
        suites = [s for s in suites if s[0] in names]
    results = []
    for i, (name, build, kind) in enumerate(suites):
        rng = np.random.default_rng([seed, i])
        with T.default_dtype(np.float64):
            fn, inputs = build(rng)
        step = MODULE_STEP if kind == "module" else STEP
        results.append(check_gradients(name, fn, inputs, rng, max_coords=max_coords, step=step, kind=kind))
    return results


def format_table(results: list[CheckResult]) -> str:
    lines = [f"{'check':<22}{'kind':<8}{'coords':>8}{'max rel err':>14}  status"]
    for r in results:
        lines.append(f"{r.name:<22}{r.kind:<8}{r.n_checked:>8}{r.max_rel_error:>14.3e}  "
                     f"{'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
