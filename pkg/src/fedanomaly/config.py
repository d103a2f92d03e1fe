"""Experiment configuration."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .data import ConfigError
from .dp import DpConfig

# head counts used for the four benchmark datasets
DATASET_HEADS = {"nsl-kdd": 2, "spambase": 3, "shuttle": 3, "arrhythmia": 3}
DATASET_DIMS = {"nsl-kdd": 122, "spambase": 57, "shuttle": 9, "arrhythmia": 279}


@dataclass
class SyntheticConfig:
    d: int = 20
    n_normal: int = 5000
    n_anomaly: int = 200
    separation: float = 6.0
    outlier_fraction: float = 0.0
    box: float = 6.0


@dataclass
class ExperimentConfig:
    dataset: str = "synthetic"
    data_path: list[str] = field(default_factory=list)
    schema: str | None = None
    n_devices: int = 3
    participation: float = 1.0
    batch_size: int = 32
    lr: float = 1e-4
    feature_ratio: float = 0.5
    feature_dim: int | None = None
    n_heads: int | None = None
    d_ff: int | None = None
    hidden: tuple[int, int] = (64, 32)
    tau: float = 0.5
    dp: DpConfig = field(default_factory=DpConfig)
    max_rounds: int = 1000
    eval_every: int = 10
    seed: int = 0
    output_dir: str = "runs/default"
    early_stop: bool = True
    converge_window: int = 50
    converge_tol: float = 1e-5
    labeled_anomalies: int | None = None
    noise_fraction: float = 0.02
    train_normal_fraction: float = 0.8
    label_skew: float | None = None
    batch_as_sequence: bool = False
    workers: int = 1
    eval_chunk: int = 2048
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)

    def validate(self) -> None:
        if self.batch_size < 2 or self.batch_size % 2:
            raise ConfigError(f"batch_size must be even and >= 2, got {self.batch_size}")
        if self.n_devices < 1:
            raise ConfigError("n_devices must be >= 1")
        if not 0 < self.participation <= 1:
            raise ConfigError(f"participation must be in (0, 1], got {self.participation}")
        if not 0 < self.feature_ratio <= 1:
            raise ConfigError(f"feature_ratio must be in (0, 1], got {self.feature_ratio}")
        if not 0 < self.tau < 1:
            raise ConfigError(f"tau must be in (0, 1), got {self.tau}")
        if self.lr < 0 or not math.isfinite(self.lr):
            raise ConfigError(f"lr must be finite and >= 0, got {self.lr}")
        if self.max_rounds < 0 or self.eval_every < 1:
            raise ConfigError("max_rounds must be >= 0 and eval_every >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.label_skew is not None and self.label_skew <= 0:
            raise ConfigError("label_skew must be positive when set")
        name = self.dataset.lower()
        if self.n_heads is None and name in DATASET_HEADS:
            d = DATASET_DIMS[name]
            if d % DATASET_HEADS[name]:
                raise ConfigError(f"default heads {DATASET_HEADS[name]} do not divide {name} dim {d}")

    def resolve_dims(self, d: int) -> tuple[int, int]:
        """Return ``(m, n_heads)`` for input dimension ``d``, validating both."""
        m = self.feature_dim if self.feature_dim is not None else math.ceil(self.feature_ratio * d)
        if not 1 <= m <= d:
            raise ConfigError(f"feature dim {m} must be in [1, {d}]")
        heads = self.n_heads
        if heads is None:
            heads = DATASET_HEADS.get(self.dataset.lower(), 2 if d % 2 == 0 else 1)
        if d % heads:
            raise ConfigError(f"{heads} heads do not divide input dim {d}")
        return m, heads

    # ------------------------------------------------------------ serialise

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["hidden"] = list(self.hidden)
        out["format_version"] = 1
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        raw.pop("format_version", None)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            if "dp" in raw:
                raw["dp"] = DpConfig(**raw["dp"])
            if "synthetic" in raw:
                raw["synthetic"] = SyntheticConfig(**raw["synthetic"])
            if "hidden" in raw:
                raw["hidden"] = tuple(raw["hidden"])
            return cls(**raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)
