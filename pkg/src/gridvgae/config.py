"""Model and generation configuration, named presets, and JSON config files."""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

DECODERS = ("inner_product", "mlp", "gcn", "iterative_gcn")
GCN_FAMILY = ("gcn", "iterative_gcn")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    decoder: str = "iterative_gcn"
    # GCN widths before the mean / log-variance heads
    encoder_hidden: tuple = (64,)
    latent_dim: int = 16
    # MLP: hidden widths; GCN family: projection width followed by GCN widths
    decoder_hidden: tuple = (64, 32)
    dropout: float = 0.2
    beta: float = 5.0
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    logvar_clamp: float = 10.0
    # refinement loop used while training the iterative GCN decoder
    train_retention_ratio: float = 0.05
    train_exploration_density: float = 0.01
    train_iterations: int = 2

    def __post_init__(self):
        object.__setattr__(self, "encoder_hidden", tuple(int(x) for x in self.encoder_hidden))
        object.__setattr__(self, "decoder_hidden", tuple(int(x) for x in self.decoder_hidden))
        self.validate()

    def validate(self):
        if self.decoder not in DECODERS:
            raise ConfigError(f"unknown decoder {self.decoder!r}; choose from {list(DECODERS)}")
        if not self.encoder_hidden or min(self.encoder_hidden) <= 0:
            raise ConfigError(f"encoder_hidden must be a non-empty list of positive widths, "
                              f"got {list(self.encoder_hidden)}")
        if self.decoder != "inner_product" and (not self.decoder_hidden or min(self.decoder_hidden) <= 0):
            raise ConfigError(f"decoder_hidden must be a non-empty list of positive widths, "
                              f"got {list(self.decoder_hidden)}")
        for name in ("latent_dim", "epochs", "batch_size"):
            if int(getattr(self, name)) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.beta > 0:
            raise ConfigError(f"beta must be > 0, got {self.beta}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if not self.logvar_clamp > 0:
            raise ConfigError(f"logvar_clamp must be > 0, got {self.logvar_clamp}")
        if not 0.0 < self.train_retention_ratio <= 1.0:
            raise ConfigError(f"train_retention_ratio must lie in (0, 1], got {self.train_retention_ratio}")
        if not 0.0 <= self.train_exploration_density < 1.0:
            raise ConfigError(f"train_exploration_density must lie in [0, 1), "
                              f"got {self.train_exploration_density}")
        if self.train_iterations < 0:
            raise ConfigError(f"train_iterations must be >= 0, got {self.train_iterations}")

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return _to_dict(self)


@dataclass(frozen=True)
class GenConfig:
    n_nodes_range: tuple = (30, 60)
    initial_edge_density: float = 0.125
    edge_retention_ratio: float = 0.04
    exploration_edge_density: float = 0.01
    iterations: int = 2
    threshold: float = 0.73
    count: int = 100
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "n_nodes_range", tuple(int(x) for x in self.n_nodes_range))
        self.validate()

    def validate(self):
        if len(self.n_nodes_range) != 2:
            raise ConfigError(f"n_nodes_range must be [lo, hi], got {list(self.n_nodes_range)}")
        lo, hi = self.n_nodes_range
        if lo < 2 or hi < lo:
            raise ConfigError(f"n_nodes_range must satisfy 2 <= lo <= hi, got {[lo, hi]}")
        if not 0.0 < self.initial_edge_density < 1.0:
            raise ConfigError(f"initial_edge_density must lie in (0, 1), got {self.initial_edge_density}")
        if not 0.0 < self.edge_retention_ratio <= 1.0:
            raise ConfigError(f"edge_retention_ratio must lie in (0, 1], got {self.edge_retention_ratio}")
        if not 0.0 <= self.exploration_edge_density < 1.0:
            raise ConfigError(f"exploration_edge_density must lie in [0, 1), "
                              f"got {self.exploration_edge_density}")
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.count < 0:
            raise ConfigError(f"count must be >= 0, got {self.count}")

    def replace(self, **changes) -> "GenConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return _to_dict(self)


def _to_dict(cfg) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


def _from_dict(cls, data: dict):
    if not isinstance(data, dict):
        raise ConfigError(f"{cls.__name__} must be a JSON object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {unknown}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid {cls.__name__}: {exc}") from None


def model_config_from_dict(data: dict) -> ModelConfig:
    return _from_dict(ModelConfig, data)


def gen_config_from_dict(data: dict) -> GenConfig:
    return _from_dict(GenConfig, data)


def _load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None


def load_model_config(path: str | os.PathLike) -> ModelConfig:
    return model_config_from_dict(_load_json(path))


def load_gen_config(path: str | os.PathLike) -> GenConfig:
    return gen_config_from_dict(_load_json(path))


def dump_config(cfg, path: str | os.PathLike):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(cfg.to_dict(), fh, indent=2)
        fh.write("\n")


# --------------------------------------------------------------------------
# presets

MODEL_PRESETS = {
    "engage-like": ModelConfig(decoder="iterative_gcn", encoder_hidden=(64,), latent_dim=16,
                               decoder_hidden=(64, 32), epochs=10, beta=5.0),
    "dingo-like": ModelConfig(decoder="iterative_gcn", encoder_hidden=(128,), latent_dim=64,
                              decoder_hidden=(128, 64, 32), epochs=25, beta=2.0),
}

GEN_PRESETS = {
    "engage-like": GenConfig(n_nodes_range=(30, 60), edge_retention_ratio=0.04,
                             exploration_edge_density=0.01, threshold=0.73),
    "dingo-like": GenConfig(n_nodes_range=(30, 300), edge_retention_ratio=0.04,
                            exploration_edge_density=0.01, threshold=0.85),
}


def model_preset(name: str, decoder: str | None = None) -> ModelConfig:
    """Named model preset, optionally with another decoder.

    Switching to the inner-product or MLP decoder also switches beta to 1.
    """
    try:
        cfg = MODEL_PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown model preset {name!r}; choose from {sorted(MODEL_PRESETS)}") from None
    if decoder is not None and decoder != cfg.decoder:
        if decoder not in DECODERS:
            raise ConfigError(f"unknown decoder {decoder!r}; choose from {list(DECODERS)}")
        cfg = cfg.replace(decoder=decoder, beta=cfg.beta if decoder in GCN_FAMILY else 1.0)
    return cfg


def gen_preset(name: str) -> GenConfig:
    try:
        return GEN_PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown generation preset {name!r}; choose from {sorted(GEN_PRESETS)}") from None
