"""Experiment configuration.

Configs are nested dataclasses serialised as flat ``section.key=value`` text,
e.g. ``kernels.count=10``.  Defaults are the reference hyperparameters
(d=100, batch 256, lr 1e-3, ten kernels).
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError

ABLATIONS = ("no_mgp", "no_insd", "no_itsd", "no_and")
SEED_ENV = "SEQDENOISE_SEED"


@dataclass
class DataConfig:
    max_len: int = 50
    min_count: int = 5
    t: int = 2
    # "last": one train pair per user (input items[:n-3], target items[n-3]);
    # "all": every prefix of the training region.
    train_pairs: str = "last"
    # draw fresh injected items every epoch instead of reusing the bundle's records
    resample_noise: bool = True


@dataclass
class ModelConfig:
    dim: int = 100
    layers: int = 2
    heads: int = 2
    ffn_mult: int = 4
    base_encoder: str = "bert"
    base_layers: int = 1
    denoise_layers: int = 1
    share_denoise_transformer: bool = False
    init_std: float = 0.02


@dataclass
class KernelConfig:
    count: int = 10
    exact_sigma: float = 1e-3
    soft_sigma: float = 0.1
    spacing: str = "endpoint"


@dataclass
class GumbelConfig:
    tau0: float = 0.5
    decay: float = 0.9
    interval: int = 40
    tau_min: float = 0.1
    eval_mode: str = "argmax"


@dataclass
class ContrastConfig:
    temperature: float = 0.5


@dataclass
class WeightConfig:
    weight: float = 0.1


@dataclass
class InterestConfig:
    count: int = 5


@dataclass
class TrainConfig:
    batch_size: int = 256
    lr: float = 1e-3
    max_epochs: int = 100
    patience: int = 10
    seed: int = 2024
    ablate: tuple = ()
    dtype: str = "float32"
    deterministic: bool = True
    restore_best: bool = True  # False keeps the final weights


@dataclass
class EvalConfig:
    ks: tuple = (5, 10, 20)
    sampled_negatives: int = 0  # 0 ranks against the full catalogue


@dataclass
class Config:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    kernels: KernelConfig = field(default_factory=KernelConfig)
    gumbel: GumbelConfig = field(default_factory=GumbelConfig)
    cl: ContrastConfig = field(default_factory=ContrastConfig)
    itscl: WeightConfig = field(default_factory=WeightConfig)
    inscl: WeightConfig = field(default_factory=WeightConfig)
    mse: WeightConfig = field(default_factory=WeightConfig)
    l2: WeightConfig = field(default_factory=lambda: WeightConfig(weight=0.0))
    interests: InterestConfig = field(default_factory=InterestConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    # -- flat key=value view -------------------------------------------------

    def to_flat(self) -> dict[str, Any]:
        flat = {}
        for sec in dataclasses.fields(self):
            sub = getattr(self, sec.name)
            for f in dataclasses.fields(sub):
                flat[f"{sec.name}.{f.name}"] = getattr(sub, f.name)
        return flat

    def dumps(self) -> str:
        return "".join(f"{k}={_format(v)}\n" for k, v in self.to_flat().items())

    def set(self, key: str, raw: Any) -> None:
        section, _, name = key.partition(".")
        sub = getattr(self, section, None)
        if sub is None or not name or not dataclasses.is_dataclass(sub):
            raise ConfigError(f"unknown config key {key!r}")
        fields = {f.name: f for f in dataclasses.fields(sub)}
        if name not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(sub, name)
        setattr(sub, name, _coerce(key, raw, current))

    def update(self, pairs: dict[str, Any]) -> "Config":
        for k, v in pairs.items():
            self.set(k, v)
        return self

    def validate(self) -> "Config":
        m = self.model
        if m.dim < 1 or m.layers < 0 or m.heads < 1:
            raise ConfigError("model.dim, model.layers, model.heads must be positive")
        if m.dim % m.heads:
            raise ConfigError(f"model.dim={m.dim} not divisible by model.heads={m.heads}")
        if m.base_encoder not in ("bert", "gru"):
            raise ConfigError(f"unknown base encoder {m.base_encoder!r}")
        if self.kernels.count < 1 or self.kernels.spacing not in ("endpoint", "bins"):
            raise ConfigError("kernels.count >= 1 and kernels.spacing in {endpoint, bins}")
        if self.gumbel.tau0 <= 0 or self.gumbel.tau_min <= 0 or not 0 < self.gumbel.decay <= 1:
            raise ConfigError("gumbel temperatures must be positive and decay in (0, 1]")
        if self.gumbel.eval_mode not in ("argmax", "sample"):
            raise ConfigError("gumbel.eval_mode must be argmax or sample")
        if self.interests.count < 1:
            raise ConfigError("interests.count must be >= 1")
        if self.data.max_len < 1 or self.data.min_count < 1 or self.data.t < 0:
            raise ConfigError("data.max_len, data.min_count >= 1 and data.t >= 0")
        if self.data.train_pairs not in ("last", "all"):
            raise ConfigError("data.train_pairs must be last or all")
        for sec in ("itscl", "inscl", "mse", "l2"):
            if getattr(self, sec).weight < 0:
                raise ConfigError(f"{sec}.weight must be non-negative")
        if self.eval.sampled_negatives < 0 or not self.eval.ks or min(self.eval.ks) < 1:
            raise ConfigError("eval.ks must be positive and eval.sampled_negatives >= 0")
        if self.cl.temperature <= 0:
            raise ConfigError("cl.temperature must be positive")
        t = self.train
        if t.batch_size < 1 or t.lr <= 0 or t.max_epochs < 1 or t.patience < 1:
            raise ConfigError("train.batch_size, lr, max_epochs, patience must be positive")
        bad = set(t.ablate) - set(ABLATIONS)
        if bad:
            raise ConfigError(f"unknown ablation(s) {sorted(bad)}; choose from {ABLATIONS}")
        if t.dtype not in ("float32", "float64"):
            raise ConfigError("train.dtype must be float32 or float64")
        return self

    def effective(self) -> "Config":
        """Copy with ablation flags folded into the loss weights."""
        cfg = loads(self.dumps())
        flags = set(cfg.train.ablate)
        if "no_and" in flags:
            cfg.mse.weight = 0.0
        if "no_itsd" in flags:
            cfg.itscl.weight = 0.0
        if "no_insd" in flags:
            cfg.inscl.weight = 0.0
        return cfg


def _format(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    return str(v)


def _coerce(key: str, raw: Any, current: Any) -> Any:
    if not isinstance(raw, str):
        return tuple(raw) if isinstance(current, tuple) else raw
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            if key == "eval.ks":
                return tuple(int(p) for p in parts)
            return tuple(parts)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw


def loads(text: str) -> Config:
    cfg = Config()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        cfg.set(key.strip(), value)
    return cfg


def load(path: str | os.PathLike | None = None, overrides: dict | None = None) -> Config:
    """Config file, then the seed environment variable, then explicit overrides."""
    cfg = loads(Path(path).read_text(encoding="utf-8")) if path else Config()
    seed = os.environ.get(SEED_ENV)
    if seed is not None:
        cfg.set("train.seed", seed)
    if overrides:
        cfg.update(overrides)
    return cfg.validate()
