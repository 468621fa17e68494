"""Residual encoder-decoder with stage-wise attention refinement and deep supervision."""
from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .. import tensor as T
from ..tensor import Tensor
from .layers import AttentionModule, Conv, ConvBNAct, ResidualBlock, SupervisionHead
from .params import ParameterStore


class Supervision(str, enum.Enum):
    """Which intermediate signals receive a loss (plus the final output, always)."""

    OUTPUT_ONLY = "output-only"
    BACKBONE_OUTPUT = "backbone-output"
    SAM = "sam"  # backbone + attention maps
    SAF = "saf"  # backbone + attentive (refined) features

    @classmethod
    def parse(cls, value) -> "Supervision":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {
            "outputonly": cls.OUTPUT_ONLY,
            "backboneplusoutput": cls.BACKBONE_OUTPUT,
            "backboneplusattentionmap": cls.SAM,
            "backboneplusattentivefeature": cls.SAF,
            "attention-map": cls.SAM,
            "attentive-feature": cls.SAF,
        }
        try:
            return cls(key)
        except ValueError:
            if key.replace("-", "") in aliases:
                return aliases[key.replace("-", "")]
            raise ValueError(f"unknown supervision strategy {value!r}") from None


@dataclass
class ModelConfig:
    encoder_channels: list[int] = field(default_factory=lambda: [16, 32, 64, 128, 128])
    # width of decoder stage i (stage 1 = finest); None -> width of the encoder level one above
    decoder_channels: list[int] | None = None
    stage_head_channels: int = 16
    n_stages: int = 4
    attention_kernel_sizes: list[int] = field(default_factory=lambda: [3, 5, 7, 9])
    attention_group_width: int = 4
    attention_enabled: bool = True
    attention_share_layers: bool = True
    supervision_strategy: Supervision = Supervision.SAF
    merge_channels: int = 16
    merge_backbone_features: bool = False
    channel_scale: float = 1.0
    patch_size: int = 64

    def __post_init__(self):
        self.supervision_strategy = Supervision.parse(self.supervision_strategy)
        self.channel_scale = float(self.channel_scale)
        if self.channel_scale <= 0:
            raise ValueError("channel_scale must be positive")
        if len(self.encoder_channels) < 2:
            raise ValueError("need at least two encoder levels")
        if not 1 <= self.n_stages <= len(self.encoder_channels) - 1:
            raise ValueError(f"n_stages must lie in [1, {len(self.encoder_channels) - 1}]")
        if self.decoder_channels is not None and len(self.decoder_channels) != len(self.encoder_channels) - 1:
            raise ValueError("decoder_channels needs one width per decoder level")
        if self.attention_group_width * len(self.attention_kernel_sizes) != self.stage_head_channels:
            raise ValueError("attention_group_width x len(attention_kernel_sizes) must equal stage_head_channels")
        gw = self.scaled(self.attention_group_width)
        if gw * len(self.attention_kernel_sizes) != self.scaled(self.stage_head_channels):
            raise ValueError("channel_scale breaks the attention grouping; pick a scale that keeps widths integral")
        if not self.attention_enabled and self.supervision_strategy is Supervision.SAM:
            raise ValueError("attention-map supervision needs attention_enabled")

    def scaled(self, c: int) -> int:
        return max(1, int(round(c * self.channel_scale)))

    @property
    def levels(self) -> int:
        return len(self.encoder_channels)

    def enc_widths(self) -> list[int]:
        return [self.scaled(c) for c in self.encoder_channels]

    def dec_widths(self) -> list[int]:
        if self.decoder_channels is not None:
            return [self.scaled(c) for c in self.decoder_channels]
        enc = self.enc_widths()
        return [enc[max(i - 1, 0)] for i in range(self.levels - 1)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["supervision_strategy"] = self.supervision_strategy.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ForwardOutputs:
    final_prob: Tensor
    backbone_probs: list[Tensor]
    refine_probs: list[Tensor]
    attention_maps: list[Tensor]

    def signals(self) -> int:
        return 1 + len(self.backbone_probs) + len(self.refine_probs)


class Network:
    """Backbone + attention refinement + supervision heads + final merge.

    Stage 1 is the finest decoder level.  With ``attention_enabled=False`` the
    refined features are the stage features themselves (the DSRNet ablation).
    """

    def __init__(self, config: ModelConfig, seed: int = 0, store: ParameterStore | None = None):
        self.config = config
        self.seed = seed
        self.store = store if store is not None else ParameterStore()
        rng = np.random.default_rng(seed)
        s, cfg = self.store, config
        enc, dec = cfg.enc_widths(), cfg.dec_widths()
        heads = cfg.scaled(cfg.stage_head_channels)
        self.head_channels = heads

        self.encoder = []
        cin = 1
        for lvl, c in enumerate(enc):
            self.encoder.append(ResidualBlock(s, f"encoder.{lvl}", cin, c, rng))
            cin = c
        # decoder level i consumes upsampled level i+1 concatenated with encoder level i
        self.decoder = [None] * (cfg.levels - 1)
        below = enc[-1]
        for lvl in reversed(range(cfg.levels - 1)):
            self.decoder[lvl] = ResidualBlock(s, f"decoder.{lvl}", below + enc[lvl], dec[lvl], rng)
            below = dec[lvl]

        n = cfg.n_stages
        self.stage_heads = [Conv(s, f"stage_head.{i}", dec[i], heads, 1, rng) for i in range(n)]
        self.backbone_sup = [SupervisionHead(s, f"backbone_sup.{i}", heads, rng) for i in range(n)]
        self.attention = []
        if cfg.attention_enabled:
            gw = cfg.scaled(cfg.attention_group_width)
            self.attention = [
                AttentionModule(s, f"attention.{i}", heads, cfg.attention_kernel_sizes, gw, rng,
                                share_layers=cfg.attention_share_layers)
                for i in range(n)
            ]
        self.refine_sup = [SupervisionHead(s, f"refine_sup.{i}", heads, rng) for i in range(n)]
        merge_in = heads * n * (2 if cfg.merge_backbone_features else 1)
        m = cfg.scaled(cfg.merge_channels)
        self.merge1 = ConvBNAct(s, "merge.layer1", merge_in, m, 3, rng)
        self.merge2 = ConvBNAct(s, "merge.layer2", m, m, 3, rng)
        self.out = SupervisionHead(s, "merge.out", m, rng)

    # ------------------------------------------------------------------
    def check_input(self, x: Tensor) -> None:
        if x.ndim != 5 or x.shape[1] != 1:
            raise T.ShapeError("network", "input (N,1,D,H,W)", "(N,1,D,H,W)", x.shape)
        div = 2 ** (self.config.levels - 1)
        for s in x.shape[2:]:
            if s % div:
                raise T.ShapeError("network", f"spatial size (divisible by {div})", div, s)

    def backbone(self, x: Tensor, training: bool) -> list[Tensor]:
        """Stage features (N, heads, D, H, W), finest stage first."""
        self.check_input(x)
        skips = []
        h = x
        for lvl, block in enumerate(self.encoder):
            if lvl:
                h = T.max_pool2(h)
            h = block(h, training)
            skips.append(h)
        dec_out = [None] * len(self.decoder)
        h = skips[-1]
        for lvl in reversed(range(len(self.decoder))):
            up = T.trilinear_upsample(h, skips[lvl].shape[2:])
            h = self.decoder[lvl](T.concat([up, skips[lvl]]), training)
            dec_out[lvl] = h
        size = x.shape[2:]
        return [T.trilinear_upsample(head(dec_out[i]), size) for i, head in enumerate(self.stage_heads)]

    def forward(self, x: Tensor, training: bool = True) -> ForwardOutputs:
        feats = self.backbone(x, training)
        backbone_probs = [head(f) for head, f in zip(self.backbone_sup, feats)]
        refined, maps = [], []
        if self.attention:
            for mod, f in zip(self.attention, feats):
                r, a = mod(f, training)
                refined.append(r)
                maps.append(a)
        else:
            refined = feats
        refine_probs = [head(r) for head, r in zip(self.refine_sup, refined)]
        merged = refined + feats if self.config.merge_backbone_features else refined
        h = self.merge2(self.merge1(T.concat(merged), training), training)
        return ForwardOutputs(self.out(h), backbone_probs, refine_probs, maps)

    __call__ = forward

    def param_count(self) -> int:
        return param_count(self.store)


def param_count(store: ParameterStore, prefix: str = "") -> int:
    """Learnable scalar count; running statistics are buffers and excluded."""
    return store.count(prefix)
