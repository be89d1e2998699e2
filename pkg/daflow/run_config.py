"""Run configuration: every architecture field plus training and IO settings.

Config files are plain key=value text (comments and blank lines allowed),
parsed with python-dotenv. List fields are written comma-separated.
"""

from dataclasses import dataclass, field, fields
import os
from pathlib import Path
import typing
from typing import Dict, Iterable, List, Mapping, Optional

from dotenv import dotenv_values

from daflow.config import ABLATION_PRESETS
from daflow.errors import ConfigError
from daflow.estimators import DafnConfig

TASKS = ('synthetic', 'manifest')
DIFFICULTIES = ('easy', 'hard')
LEVEL_WEIGHTINGS = ('n_plus_1', 'n_minus_1')
_TRUE = {'1', 'true', 'yes', 'on'}
_FALSE = {'0', 'false', 'no', 'off'}


@dataclass
class RunConfig(DafnConfig):
    task: str = 'synthetic'
    seed: int = 0
    epochs: int = 200
    batch_size: int = 4
    lr: float = 5e-5
    lr_decay: float = 0.1
    lr_decay_every: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    lambda_l1: float = 1.0
    lambda_prec: float = 1.0
    lambda_style: float = 100.0
    level_weighting: str = 'n_plus_1'
    perceptual_weights: str = ''
    perceptual_min_size: int = 16
    checkpoint_dir: str = 'checkpoints'
    output_dir: str = field(default_factory=lambda: os.getenv('DAFLOW_OUTPUT_DIR', 'runs'))
    checkpoint_every: int = 10
    eval_every: int = 10
    log_every: int = 10
    train_pairs: int = 2000
    eval_pairs: int = 200
    difficulty: str = 'easy'
    data_root: str = ''
    overfit: bool = False
    max_steps: int = 0
    prefetch: int = 2

    def validate(self):
        super().validate()
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got '{self.task}'")
        if self.task == 'manifest' and not self.data_root:
            raise ConfigError("task=manifest needs data_root")
        if self.difficulty not in DIFFICULTIES:
            raise ConfigError(f"difficulty must be one of {DIFFICULTIES}, got '{self.difficulty}'")
        if self.level_weighting not in LEVEL_WEIGHTINGS:
            raise ConfigError(f"level_weighting must be one of {LEVEL_WEIGHTINGS}, got '{self.level_weighting}'")
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigError(f"Need epochs >= 0, batch_size >= 1, lr > 0; got {self.epochs}, {self.batch_size}, {self.lr}")
        if min(self.lambda_l1, self.lambda_prec, self.lambda_style) < 0:
            raise ConfigError("Loss weights must be nonnegative")
        if self.checkpoint_every < 1 or self.eval_every < 1 or self.log_every < 1:
            raise ConfigError("checkpoint_every, eval_every and log_every must be >= 1")
        return self

    def dafn_config(self) -> DafnConfig:
        """The architecture subset, as stored in checkpoints."""
        names = {f.name for f in fields(DafnConfig)}
        return DafnConfig(**{k: v for k, v in vars(self).items() if k in names})

    def with_overrides(self, overrides: Mapping[str, str]) -> 'RunConfig':
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(_coerce_all(overrides))
        return RunConfig(**values)

    def to_dict(self) -> Dict[str, str]:
        return {f.name: _format_value(getattr(self, f.name)) for f in fields(self)}

    def to_text(self) -> str:
        return ''.join(f"{k}={v}\n" for k, v in self.to_dict().items())

    @classmethod
    def from_mapping(cls, values: Mapping[str, Optional[str]]) -> 'RunConfig':
        return cls(**_coerce_all(values)).validate()

    @classmethod
    def from_file(cls, path, overrides: Mapping[str, str] = None) -> 'RunConfig':
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Config file not found: {path}")
        values = dict(dotenv_values(path))
        values.update(overrides or {})
        return cls.from_mapping(values)

    @classmethod
    def preset(cls, name: str, base: 'RunConfig' = None) -> 'RunConfig':
        if name not in ABLATION_PRESETS:
            raise ConfigError(f"Unknown ablation preset '{name}', expected one of {list(ABLATION_PRESETS)}")
        base = base or cls()
        values = {f.name: getattr(base, f.name) for f in fields(base)}
        values.update(ABLATION_PRESETS[name])
        return cls(**values).validate()


def parse_overrides(items: Iterable[str]) -> Dict[str, str]:
    """Turn ['key=value', ...] from --set flags into a dict."""
    out = {}
    for item in items or []:
        key, sep, value = item.partition('=')
        if not sep or not key.strip():
            raise ConfigError(f"Override must look like key=value, got '{item}'")
        out[key.strip()] = value.strip()
    return out


def _field_types():
    hints = typing.get_type_hints(RunConfig)
    return {f.name: hints[f.name] for f in fields(RunConfig)}


def _coerce_all(values: Mapping[str, Optional[str]]) -> Dict[str, object]:
    types = _field_types()
    unknown = sorted(set(values) - set(types))
    if unknown:
        raise ConfigError(f"Unknown config keys: {unknown}")
    return {k: _coerce(k, v, types[k]) for k, v in values.items()}


def _coerce(key: str, raw, kind):
    if not isinstance(raw, str):
        if raw is None:
            raise ConfigError(f"Config key '{key}' has no value")
        return raw
    text = raw.strip()
    try:
        if kind is bool:
            lowered = text.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if typing.get_origin(kind) in (list, List):
            return [int(part) for part in text.replace(' ', '').split(',') if part]
    except ValueError:
        raise ConfigError(f"Config key '{key}' expects {getattr(kind, '__name__', kind)}, got '{raw}'")
    return text


def _format_value(value) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, (list, tuple)):
        return ','.join(str(v) for v in value)
    return str(value)
