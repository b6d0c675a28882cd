"""Training configuration and its key = value text form."""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from ..density import DensifyConfig
from ..losses import LossWeights

ABLATIONS = ("knn", "agg", "occ-losses", "mlp-heads")


@dataclass
class LearningRates:
    mean: float = 1.6e-4  # multiplied by the scene extent
    sh: float = 2.5e-3
    opacity: float = 5e-2
    scale: float = 5e-3
    rotation: float = 1e-3
    mlp: float = 5e-4


@dataclass
class TrainConfig:
    iterations: int = 2400
    seed: int = 0
    k: int = 3
    densify: DensifyConfig = field(default_factory=DensifyConfig)
    densify_from: int = 500
    densify_until: float = 0.6  # fraction of iterations
    loss: LossWeights = field(default_factory=LossWeights)
    lr: LearningRates = field(default_factory=LearningRates)
    init_opacity: float = 0.1
    init_color: float = 0.5
    # ablation switches
    use_knn: bool = True
    use_features: bool = True  # False: inverse-distance blend of neighbour sh / opacity
    use_occ_losses: bool = True
    use_mlp_heads: bool = True  # lbs-offset and pose-correction networks
    tile: int = 16
    log_every: int = 0
    head_precision: str = "float32"  # MLP arithmetic; the cloud and skinning stay float64

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.head_precision not in ("float32", "float64"):
            raise ValueError("head_precision must be float32 or float64")

    def with_ablation(self, name: str) -> "TrainConfig":
        flags = {"knn": "use_knn", "agg": "use_features", "occ-losses": "use_occ_losses", "mlp-heads": "use_mlp_heads"}
        if name not in flags:
            raise ValueError(f"unknown ablation {name!r}; choose from {', '.join(ABLATIONS)}")
        return dataclasses.replace(self, **{flags[name]: False})


def _flatten(obj, prefix=""):
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if dataclasses.is_dataclass(v):
            yield from _flatten(v, prefix + f.name + ".")
        else:
            yield prefix + f.name, v


def config_to_text(cfg: TrainConfig) -> str:
    return "".join(f"{k} = {v!r}\n" for k, v in _flatten(cfg))


def _parse(raw: str, hint):
    raw = raw.strip()
    if isinstance(hint, types.UnionType) or typing.get_origin(hint) is typing.Union:
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if raw == "None":
            return None
        return _parse(raw, args[0])
    if hint is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if hint is int:
        return int(raw)
    if hint is float:
        return float(raw)
    return raw.strip("'\"")


def _set(obj, keys, raw, full_key):
    hints = typing.get_type_hints(type(obj))
    name = keys[0]
    if name not in hints:
        raise KeyError(f"unknown config key {full_key!r}")
    if len(keys) == 1:
        if dataclasses.is_dataclass(getattr(obj, name)):
            raise KeyError(f"config key {full_key!r} names a section, not a value")
        return dataclasses.replace(obj, **{name: _parse(raw, hints[name])})
    child = getattr(obj, name)
    if not dataclasses.is_dataclass(child):
        raise KeyError(f"unknown config key {full_key!r}")
    return dataclasses.replace(obj, **{name: _set(child, keys[1:], raw, full_key)})


def config_from_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    cfg = base or TrainConfig()
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        cfg = _set(cfg, key.split("."), raw, key)
    return cfg


def load_config(path) -> TrainConfig:
    return config_from_text(Path(path).read_text())


def save_config(cfg: TrainConfig, path) -> None:
    Path(path).write_text(config_to_text(cfg))
