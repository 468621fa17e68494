"""End-to-end training: patch sampling, augmentation, loss, backprop, Adam."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .. import tensor as T
from ..data.patches import normalize
from ..data.volume import Volume
from ..network.model import Network
from ..network.params import save_checkpoint
from .augment import BatchSample, augment
from .losses import SupervisionWeights, alpha_for_batch, signal_names, total_loss
from .optim import AdamState, adam_step, lr_at

log = logging.getLogger(__name__)

# independent counter-based random streams
STREAM_SAMPLE, STREAM_AUGMENT = 1, 2


class NonFiniteLossError(FloatingPointError):
    def __init__(self, iteration: int, value: float):
        self.iteration, self.value = iteration, value
        super().__init__(f"non-finite loss {value} at iteration {iteration}")


@dataclass
class TrainConfig:
    lr0: float = 1e-3
    lr_drops: tuple[int, ...] = (3000, 4500)
    lr_factor: float = 0.1
    total_iters: int = 6000
    weight_decay: float = 1e-4
    batch_size: int = 4
    patch_size: int = 64
    backbone_weights: tuple[float, ...] = (0.8, 0.7, 0.6, 0.5)
    refine_weights: tuple[float, ...] = (0.8, 0.7, 0.6, 0.5)
    final_weight: float = 1.0
    alpha: float | None = None  # None -> per-batch negative/positive ratio
    augment_flips: bool = True
    augment_rotations: bool = True
    foreground_fraction: float = 0.5
    checkpoint_every: int = 500
    seed: int = 0

    def __post_init__(self):
        # YAML reads "1e-3" as a string, so numeric fields are coerced explicitly
        for name in ("lr0", "lr_factor", "weight_decay", "final_weight", "foreground_fraction"):
            setattr(self, name, float(getattr(self, name)))
        for name in ("total_iters", "batch_size", "patch_size", "checkpoint_every", "seed"):
            setattr(self, name, int(getattr(self, name)))
        if self.alpha is not None:
            self.alpha = float(self.alpha)
        self.lr_drops = tuple(int(d) for d in self.lr_drops)
        self.backbone_weights = tuple(float(w) for w in self.backbone_weights)
        self.refine_weights = tuple(float(w) for w in self.refine_weights)
        if self.total_iters < 1 or self.batch_size < 1:
            raise ValueError("total_iters and batch_size must be positive")
        if min(self.backbone_weights + self.refine_weights + (self.final_weight,)) <= 0:
            raise ValueError("supervision weights must be positive")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError("alpha must be positive")

    def lr_at(self, iteration: int) -> float:
        return lr_at(iteration, self.lr0, self.lr_drops, self.lr_factor)

    def weights(self) -> SupervisionWeights:
        return SupervisionWeights(self.backbone_weights, self.refine_weights, self.final_weight)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("lr_drops", "backbone_weights", "refine_weights"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Case:
    image: np.ndarray  # normalized intensities
    label: np.ndarray  # uint8
    fg: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.fg = np.argwhere(self.label > 0)

    @classmethod
    def from_volumes(cls, image: Volume, label: Volume) -> "Case":
        if image.dims != label.dims:
            raise ValueError(f"image dims {image.dims} != label dims {label.dims}")
        return cls(normalize(image.data), (label.data > 0).astype(np.uint8))


def stream(seed: int, iteration: int, kind: int) -> np.random.Generator:
    return np.random.default_rng([seed, iteration, kind])


def sample_batch(cases: Sequence[Case], batch_size: int, patch: int, fg_fraction: float,
                 rng: np.random.Generator) -> BatchSample:
    """Random patches; a ``fg_fraction`` share is centred on a random foreground voxel."""
    imgs, labs = [], []
    for _ in range(batch_size):
        case = cases[int(rng.integers(len(cases)))]
        dims = np.array(case.image.shape)
        img, lab = case.image, case.label
        if np.any(dims < patch):
            shape = np.maximum(dims, patch)
            img = np.pad(img, [(0, s - d) for s, d in zip(shape, dims)])
            lab = np.pad(lab, [(0, s - d) for s, d in zip(shape, dims)])
            dims = shape
        if len(case.fg) and rng.random() < fg_fraction:
            c = case.fg[int(rng.integers(len(case.fg)))]
            origin = np.clip(c - patch // 2, 0, dims - patch)
        else:
            origin = np.array([int(rng.integers(0, d - patch + 1)) for d in dims])
        sl = tuple(slice(o, o + patch) for o in origin)
        imgs.append(img[sl])
        labs.append(lab[sl])
    return BatchSample(np.stack(imgs)[:, None].astype(np.float32), np.stack(labs)[:, None].astype(np.uint8))


def maybe_augment(batch: BatchSample, config: TrainConfig, rng: np.random.Generator) -> BatchSample:
    if not (config.augment_flips or config.augment_rotations):
        return batch
    if config.augment_flips and config.augment_rotations:
        return augment(batch, rng)
    from .augment import ROTATIONS, apply_transform
    imgs, labs = [], []
    for img, lab in zip(batch.image, batch.label):
        flips = tuple(i for i in range(3) if rng.random() < 0.5) if config.augment_flips else ()
        rot = ROTATIONS[int(rng.integers(len(ROTATIONS)))] if config.augment_rotations else ROTATIONS[0]
        imgs.append(apply_transform(img, (flips, rot)))
        labs.append(apply_transform(lab, (flips, rot)))
    return BatchSample(np.stack(imgs), np.stack(labs))


@dataclass
class TrainResult:
    trace: list[dict]
    checkpoint: Path | None
    seconds: float


def train_step(model: Network, batch: BatchSample, config: TrainConfig, state: AdamState, lr: float):
    x = T.Tensor(batch.image, dtype=np.float32)
    g = batch.label.astype(np.float32)
    alpha = config.alpha if config.alpha is not None else alpha_for_batch(g)
    outputs = model(x, training=True)
    loss, parts = total_loss(outputs, g, model.config.supervision_strategy, config.weights(), alpha)
    value = loss.item()
    if not math.isfinite(value):
        return value, parts, False
    model.store.zero_grad()
    T.backward(loss)
    adam_step(model.store.params, state, lr, config.weight_decay)
    return value, parts, True


def train_loop(model: Network, cases: Sequence[Case] | None, config: TrainConfig, out_dir=None,
               fixed_batch: BatchSample | None = None, run_config: dict | None = None,
               progress: Callable[[dict], None] | None = None) -> TrainResult:
    """Train ``model`` for ``config.total_iters`` optimizer steps.

    With ``out_dir`` the loss trace goes to ``loss_trace.csv`` (one row per
    iteration, written as it happens) and the parameters to
    ``checkpoint.ckpt`` every ``checkpoint_every`` iterations and at the end.
    """
    if fixed_batch is None:
        if not cases or not any(len(c.fg) for c in cases):
            raise ValueError("training needs at least one case containing foreground")
    names = signal_names(model.config.supervision_strategy, model.config.n_stages)
    columns = ["iter", "lr", "total_loss", *names]
    state = AdamState()
    trace: list[dict] = []
    ckpt = None
    writer = fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        ckpt = out_dir / "checkpoint.ckpt"
        fh = open(out_dir / "loss_trace.csv", "w", newline="")
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
    meta = {"model": model.config.to_dict(), "train": config.to_dict()}
    if run_config is not None:
        meta = run_config
    t0 = time.perf_counter()
    try:
        for it in range(config.total_iters):
            lr = config.lr_at(it)
            if fixed_batch is not None:
                batch = fixed_batch
            else:
                batch = sample_batch(cases, config.batch_size, config.patch_size,
                                     config.foreground_fraction, stream(config.seed, it, STREAM_SAMPLE))
                batch = maybe_augment(batch, config, stream(config.seed, it, STREAM_AUGMENT))
            value, parts, ok = train_step(model, batch, config, state, lr)
            if not ok:
                raise NonFiniteLossError(it, value)
            row = {"iter": it, "lr": lr, "total_loss": value, **parts}
            trace.append(row)
            if writer is not None:
                writer.writerow(row)
                fh.flush()
            if progress is not None:
                progress(row)
            if ckpt is not None and config.checkpoint_every and (it + 1) % config.checkpoint_every == 0:
                save_checkpoint(model.store, ckpt, meta, config.seed, {"iteration": it + 1})
    finally:
        if fh is not None:
            fh.close()
    if ckpt is not None:
        save_checkpoint(model.store, ckpt, meta, config.seed, {"iteration": config.total_iters})
    return TrainResult(trace, ckpt, time.perf_counter() - t0)
