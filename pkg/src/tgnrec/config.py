"""Training configuration and its flat ``key = value`` file format."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 100
    epochs: int = 20
    lr: float = 1e-3
    d_mem: int = 64
    d_time: int = 32
    d_out: int = 64
    d_dec: int = 64
    heads: int = 2
    n_neighbors: int = 10
    message: str = "learned"          # identity | learned
    aggregator: str = "last"          # mean | last
    memory_init: str = "features"     # features | zeros
    negatives: int = 1
    eval_negatives: int = 49
    eval_protocol: str = "one_positive"  # one_positive | all_references
    eval_batch_size: int = 200
    k_list: tuple[int, ...] = (10, 20, 50)
    seed: int = 0
    split: tuple[float, float, float] = (0.7, 0.15, 0.15)
    precision: str = "float32"
    validate: bool = True

    def validate_config(self) -> "TrainConfig":
        for name in ("batch_size", "d_mem", "d_time", "d_out", "d_dec", "heads", "n_neighbors",
                     "negatives", "eval_negatives", "eval_batch_size"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be non-negative, got {self.epochs}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.d_mem % self.heads:
            raise ConfigError(f"d_mem ({self.d_mem}) must be divisible by heads ({self.heads})")
        choices = {
            "message": ("identity", "learned"),
            "aggregator": ("mean", "last"),
            "memory_init": ("features", "zeros"),
            "eval_protocol": ("one_positive", "all_references"),
            "precision": ("float32", "float64"),
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        ks = tuple(self.k_list)
        if not ks or any(k <= 0 for k in ks) or list(ks) != sorted(ks):
            raise ConfigError(f"k_list must be positive and ascending, got {ks}")
        if len(self.split) != 3 or any(not f > 0 for f in self.split) or abs(sum(self.split) - 1.0) > 1e-9:
            raise ConfigError(f"split must be three positive fractions summing to 1, got {self.split}")
        return self

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["k_list"] = list(self.k_list)
        d["split"] = list(self.split)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "k_list" in d:
            d["k_list"] = tuple(int(k) for k in d["k_list"])
        if "split" in d:
            d["split"] = tuple(float(f) for f in d["split"])
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _coerce(name: str, raw: str, kind):
    raw = raw.strip()
    try:
        if kind is bool or kind == "bool":
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
        if name == "k_list":
            return tuple(int(x) for x in raw.replace(",", " ").split())
        if name == "split":
            return tuple(float(x) for x in raw.replace(",", " ").split())
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def parse_overrides(pairs: dict[str, str]) -> dict:
    types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    out = {}
    for key, raw in pairs.items():
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = _coerce(key, raw, types[key])
    return out


def load_config_file(path: str | Path, base: TrainConfig | None = None) -> TrainConfig:
    pairs = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value
    return (base or TrainConfig()).replace(**parse_overrides(pairs))


def write_config_file(path: str | Path, config: TrainConfig) -> None:
    lines = []
    for f in dataclasses.fields(config):
        v = getattr(config, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    Path(path).write_text("\n".join(lines) + "\n")
