"""Pipeline configuration and its flat ``section.key = value`` text format.

Example::

    seed = 42
    outcome = mortality
    interval_days = 5
    data.window_candidates = 30, 60, 120
    data.aggregators = vital_0:max, vital_1:last
    train.lr = 0.001
    gb.n_trees = 200
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .dynamic_kd import TrainConfig
from .errors import ConfigError
from .static_op import GbConfig
from .synth import SynthConfig

INTERVALS = (5, 7, 14, 30)


@dataclass
class DataConfig:
    dynamic_path: str = ""
    static_path: str = ""
    labels_path: str = ""
    window_candidates: tuple = (30, 60, 120)
    completeness_target: float = 0.9
    aggregators: dict = field(default_factory=dict)
    # uniform observation dropout applied when `synth` writes CSVs
    synth_dropout: float = 0.0


@dataclass
class ExplainConfig:
    patients: tuple = ()
    top_k: int = 10


@dataclass
class PipelineConfig:
    seed: int = 42
    outcome: str = "mortality"
    interval_days: int = 5
    k: int = 3
    out_dir: str = "kdop_out"
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    gb: GbConfig = field(default_factory=GbConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    explain: ExplainConfig = field(default_factory=ExplainConfig)

    def validate(self):
        if self.interval_days not in INTERVALS:
            raise ConfigError(f"interval_days must be one of {INTERVALS}")
        if self.k < 2:
            raise ConfigError("k must be at least 2")
        return self

    def path(self, name: str) -> Path:
        """Resolved input path; defaults live under ``<out_dir>/data``."""
        given = getattr(self.data, name + "_path")
        return Path(given) if given else Path(self.out_dir) / "data" / f"{name}.csv"

    def to_flat(self) -> dict:
        return flatten(self)

    def hash(self) -> str:
        """Digest of every setting that influences fitted artifacts."""
        flat = {k: v for k, v in self.to_flat().items()
                if not k.startswith("explain.") and k != "out_dir"}
        blob = json.dumps(flat, sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


SECTIONS = ("data", "train", "gb", "synth", "explain")


def flatten(cfg: PipelineConfig) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.name in SECTIONS:
            for k, v in asdict(value).items():
                out[f"{f.name}.{k}"] = v
        else:
            out[f.name] = value
    return out


def format_config(cfg: PipelineConfig) -> str:
    lines = []
    for key, value in cfg.to_flat().items():
        if isinstance(value, dict):
            text = ", ".join(f"{k}:{v}" for k, v in value.items())
        elif isinstance(value, (list, tuple)):
            text = ", ".join(str(v) for v in value)
        else:
            text = str(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"


def _coerce(key, text, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, dict):
            pairs = [p for p in (s.strip() for s in text.split(",")) if p]
            return dict(p.split(":", 1) for p in pairs)
        if isinstance(default, tuple):
            items = [s.strip() for s in text.split(",") if s.strip()]
            if default and isinstance(default[0], int):
                return tuple(int(s) for s in items)
            return tuple(items)
        return text
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None


def apply_overrides(cfg: PipelineConfig, pairs: dict) -> PipelineConfig:
    for key, text in pairs.items():
        if "." in key:
            section, name = key.split(".", 1)
            if section not in SECTIONS:
                raise ConfigError(f"unknown config section {section!r}")
            target = getattr(cfg, section)
        else:
            name, target = key, cfg
        if name in SECTIONS or not hasattr(target, name):
            raise ConfigError(f"unknown config key {key!r}")
        value = _coerce(key, text, getattr(target, name)) if isinstance(text, str) else text
        setattr(target, name, value)
    # re-run dataclass validation
    try:
        cfg.train = TrainConfig(**asdict(cfg.train))
        cfg.gb = GbConfig(**asdict(cfg.gb))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    cfg.synth.validate()
    return cfg.validate()


def parse_config_text(text: str) -> dict:
    pairs = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {n}: expected 'key = value'")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value
    return pairs


def load_config(path=None, **overrides) -> PipelineConfig:
    cfg = PipelineConfig()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        apply_overrides(cfg, parse_config_text(p.read_text(encoding="utf-8")))
    return apply_overrides(cfg, {k: v for k, v in overrides.items() if v is not None})
