"""Run configuration: model, train, data and metrics sections in one YAML document."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .data.phantom import PhantomRanges
from .network.model import ModelConfig
from .training.loop import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    root: str | None = None  # dataset directory holding manifest.json
    n_train: int = 20
    n_test: int = 5
    train_seed_base: int = 1000
    test_seed_base: int = 900000
    phantom: PhantomRanges = field(default_factory=PhantomRanges)
    infer_stride: int | None = None  # None -> half the patch size
    threshold: float = 0.5

    def __post_init__(self):
        if isinstance(self.phantom, dict):
            self.phantom = PhantomRanges.from_dict(self.phantom)
        self.threshold = float(self.threshold)
        if self.n_train < 0 or self.n_test < 0:
            raise ValueError("phantom counts must be non-negative")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")

    def train_seeds(self) -> list[int]:
        return [self.train_seed_base + i for i in range(self.n_train)]

    def test_seeds(self) -> list[int]:
        return [self.test_seed_base + i for i in range(self.n_test)]


@dataclass
class MetricsConfig:
    symmetric_asd: bool = True
    error_maps: bool = False


def _from(cls, d: dict | None, section: str):
    d = dict(d or {})
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"[{section}] unknown keys: {sorted(unknown)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from exc


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    seed: int = 0

    SECTIONS = ("model", "train", "data", "metrics")

    @classmethod
    def desk(cls) -> "RunConfig":
        """Quarter-width network on 32^3 patches with a 1500-step schedule."""
        return cls(
            model=ModelConfig(channel_scale=0.25, patch_size=32),
            train=TrainConfig(lr0=1e-2, lr_drops=(750, 1125), total_iters=1500, patch_size=32,
                              checkpoint_every=250),
            data=DataConfig(infer_stride=16),
        )

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d or {})
        unknown = set(d) - set(cls.SECTIONS) - {"seed", "preset"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        preset = d.get("preset", "full")
        if preset not in ("full", "desk"):
            raise ConfigError(f"unknown preset {preset!r} (full or desk)")
        base = (cls.desk() if preset == "desk" else cls()).to_dict()
        for s in cls.SECTIONS:
            base[s].update(d.get(s) or {})
        try:
            seed = int(d.get("seed", 0))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"seed: {exc}") from exc
        cfg = cls(
            model=_from(ModelConfig, base["model"], "model"),
            train=_from(TrainConfig, base["train"], "train"),
            data=_from(DataConfig, base["data"], "data"),
            metrics=_from(MetricsConfig, base["metrics"], "metrics"),
            seed=seed,
        )
        cfg.sync()
        return cfg

    def sync(self) -> None:
        """The run seed drives training; patch size follows the model."""
        self.train.seed = self.seed
        self.train.patch_size = self.model.patch_size

    def to_dict(self) -> dict:
        data = asdict(self.data)
        data["phantom"] = {k: list(v) if isinstance(v, tuple) else v for k, v in data["phantom"].items()}
        return {
            "seed": self.seed,
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "data": data,
            "metrics": asdict(self.metrics),
        }

    def override(self, dotted: str, value) -> None:
        """Set ``section.key`` to ``value`` and re-validate."""
        section, _, key = dotted.partition(".")
        d = self.to_dict()
        if section not in self.SECTIONS or not key:
            raise ConfigError(f"override {dotted!r}: expected <section>.<key> with section in {self.SECTIONS}")
        if key not in d[section]:
            raise ConfigError(f"override {dotted!r}: unknown key")
        d[section][key] = value
        new = RunConfig.from_dict({**d, "preset": "full"})
        self.model, self.train, self.data, self.metrics = new.model, new.train, new.data, new.metrics

    def dump(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return RunConfig.from_dict(raw or {})
