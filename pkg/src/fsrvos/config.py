"""Run configuration: dataclasses, flat dotted-key JSON files, and a content hash."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    width: int = 64  # C, channels of every pyramid level and token feature
    seg_channels: int = 8  # C_seg
    d_head: int = 256
    queries: int = 5  # N
    enc_layers: int = 3
    dec_layers: int = 3
    heads: int = 8
    mca_heads: int = 8
    ffn_mult: int = 4
    text_dim: int = 64
    dynamic_channels: int = 8
    use_self_affinity: bool = True
    use_cross_affinity: bool = True


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    steps: int = 2000
    shots: int = 5  # K
    frames: int = 8  # T
    sigma: float = 0.5
    lambda_cls: float = 2.0
    lambda_kernel: float = 5.0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    checkpoint_every: int = 100
    soft_mask_targets: bool = True  # area-coverage targets at H/4; False gives nearest


@dataclass
class DataConfig:
    height: int = 64
    width: int = 64
    classes: int = 8
    folds: int = 4
    fold: int = 1
    fold_seed: int = 0
    boundary_tolerance: int = 1
    enforce_frame_size_limits: bool = False
    eval_upsample: str = "bilinear"  # how H/4 mask logits reach input resolution


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    seed: int = 0
    mode: str = "single"

    def to_flat(self) -> dict:
        flat = {}
        for section in ("model", "train", "data"):
            for key, value in dataclasses.asdict(getattr(self, section)).items():
                flat[f"{section}.{key}"] = value
        flat["seed"] = self.seed
        flat["mode"] = self.mode
        return flat

    @classmethod
    def from_flat(cls, flat: dict) -> "RunConfig":
        cfg = cls()
        cfg.update(flat)
        return cfg

    def update(self, flat: dict) -> None:
        for key, value in flat.items():
            if value is None:
                continue
            parts = key.split(".")
            if len(parts) == 1 and parts[0] in ("seed", "mode"):
                setattr(self, parts[0], type(getattr(self, parts[0]))(value))
                continue
            if len(parts) != 2 or parts[0] not in ("model", "train", "data"):
                raise ConfigError(f"unknown configuration key {key!r}")
            section = getattr(self, parts[0])
            if not hasattr(section, parts[1]):
                raise ConfigError(f"unknown configuration key {key!r}")
            current = getattr(section, parts[1])
            if isinstance(current, bool):
                if not isinstance(value, bool):
                    raise ConfigError(f"{key} must be a boolean")
            elif isinstance(current, int):
                if isinstance(value, bool) or float(value) != int(value):
                    raise ConfigError(f"{key} must be an integer")
                value = int(value)
            elif isinstance(current, float):
                value = float(value)
            setattr(section, parts[1], value)

    def content_hash(self) -> str:
        blob = json.dumps(self.to_flat(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def validate(self) -> None:
        m, t, d = self.model, self.train, self.data
        if self.mode not in ("single", "multi"):
            raise ConfigError(f"mode must be 'single' or 'multi', got {self.mode!r}")
        if not 0.0 < t.sigma < 1.0:
            raise ConfigError(f"sigma must lie in (0, 1), got {t.sigma}")
        if d.height % 32 or d.width % 32:
            raise ConfigError("frame height and width must be divisible by 32")
        if d.enforce_frame_size_limits and not (360 <= min(d.height, d.width) and max(d.height, d.width) <= 640):
            raise ConfigError("frame size outside the 360..640 range")
        if d.classes % d.folds:
            raise ConfigError(f"{d.classes} classes cannot be split into {d.folds} folds")
        if not 1 <= d.fold <= d.folds:
            raise ConfigError(f"fold must be in 1..{d.folds}")
        if m.width % m.heads or m.width % m.mca_heads:
            raise ConfigError("model width must be divisible by the head counts")
        if m.queries < 1 or t.shots < 1 or t.frames < 1:
            raise ConfigError("queries, shots and frames must be positive")
        if d.eval_upsample not in ("bilinear", "nearest"):
            raise ConfigError(f"eval_upsample must be 'bilinear' or 'nearest', got {d.eval_upsample!r}")
        if t.lr <= 0 or t.weight_decay < 0:
            raise ConfigError("learning rate must be positive and weight decay nonnegative")


# Values the published protocol fixes; defaults must agree with them.
REFERENCE_DEFAULTS = {
    "train.lr": 1e-4,
    "train.weight_decay": 5e-4,
    "train.shots": 5,
    "train.sigma": 0.5,
    "train.lambda_cls": 2.0,
    "train.lambda_kernel": 5.0,
    "model.d_head": 256,
    "model.dynamic_channels": 8,
    "data.folds": 4,
}


def check_reference_defaults() -> None:
    flat = RunConfig().to_flat()
    bad = {k: (flat[k], v) for k, v in REFERENCE_DEFAULTS.items() if flat[k] != v}
    if bad:
        raise ConfigError(f"defaults drifted from the published protocol: {bad}")


def load_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        try:
            flat = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(flat, dict):
            raise ConfigError("config file must hold a JSON object")
        cfg.update(flat)
    if overrides:
        cfg.update(overrides)
    cfg.validate()
    return cfg
