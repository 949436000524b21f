"""Key-value experiment configuration files.

One ``key = value`` pair per line; ``#`` starts a comment. Keys are the
field names of :class:`AttentionConfig`, :class:`PatchConfig`,
:class:`ModelConfig` and :class:`TrainConfig` (all distinct), plus the data
keys in :data:`DATA_KEYS`. Example::

    # desk-scale xicor run
    kernel = xicor
    model_dim = 128
    n_head = 2
    lookback = 96
    horizon = 24
    epochs = 20
    synth = logistic_map
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from ..attention import AttentionConfig
from ..errors import ConfigError
from .model import ModelConfig
from .patching import PatchConfig
from .training import TrainConfig

DATA_KEYS = {
    "data": str,  # CSV path; takes precedence over synth
    "synth": str,
    "t_total": int,
    "n_vars": int,
    "data_seed": int,
    "train_frac": float,
    "valid_frac": float,
}

_SECTIONS = (AttentionConfig, PatchConfig, ModelConfig, TrainConfig)


def _coerce(raw: str, typ):
    if typ is bool or typ == "bool":
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(raw)
    return typ(raw)


def _field_types() -> dict[str, object]:
    types = dict(DATA_KEYS)
    for cls in _SECTIONS:
        for f in fields(cls):
            t = f.type if not isinstance(f.type, str) else {"int": int, "float": float, "str": str,
                                                            "bool": bool}[f.type]
            types[f.name] = t
    return types


def parse_config_text(text: str, source: str = "<config>") -> dict:
    types = _field_types()
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            out[key] = _coerce(value, types[key])
        except ValueError:
            raise ConfigError(f"{source}:{lineno}: bad value {value!r} for {key}") from None
    return out


def load_config(path) -> dict:
    path = Path(path)
    return parse_config_text(path.read_text(), str(path))


@dataclass
class ExperimentConfig:
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    patch: PatchConfig = field(default_factory=PatchConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: dict = field(default_factory=lambda: {"synth": "logistic_map", "t_total": 1000, "n_vars": 4,
                                                "data_seed": 0, "train_frac": 0.7, "valid_frac": 0.1})

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        types = _field_types()
        for k in values:
            if k not in types:
                raise ConfigError(f"unknown config key {k!r}")
        built = []
        for sec in _SECTIONS:
            names = {f.name for f in fields(sec)}
            built.append(sec(**{k: v for k, v in values.items() if k in names}))
        data = cls().data
        data.update({k: v for k, v in values.items() if k in DATA_KEYS})
        return cls(*built, data)

    def to_mapping(self) -> dict:
        out = {}
        for sec in (self.attention, self.patch, self.model, self.train):
            out.update({f.name: getattr(sec, f.name) for f in fields(sec)})
        out.update(self.data)
        return out

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_mapping().items())
