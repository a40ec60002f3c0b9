"""Dataclass configs, file loading and dotted-key overrides.

A run is fully described by one :class:`RunConfig`. Files may be YAML or JSON
and only need to list the keys they change; unknown keys are rejected.
Overrides use dotted paths, e.g. ``curriculum.alpha_epochs=20``; values are
parsed as YAML scalars or flow sequences (``data.image_size=[64,48]``).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .data.augment import AugmentConfig
from .data.synthetic import SyntheticConfig
from .networks import NetConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    path: str = ""  # dataset directory; empty means generate in memory
    train_count: int = 1000
    test_count: int = 200
    annotation_ratio: float = 0.2
    seed: int = 0
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)


@dataclass
class CurriculumConfig:
    """Epoch budgets are full-scale values multiplied by ``desk_factor``."""

    mask_epochs: int = 100
    alpha_epochs: int = 100
    image_vae_epochs: int = 200
    pose_vae_epochs: int = 200
    supervised_epochs: tuple = (50, 50)  # before and after the mid-stage checkpoint
    semi_epochs: int = 50
    baseline: bool = True  # train alpha alone for as many epochs as the supervised stage
    desk_factor: float = 0.1
    eval_window: int = 10  # scaled like the budgets, never below 1
    lr: float = 1e-3
    batch_size: int = 16
    semi_composition: tuple = (12, 4)  # (annotated, unannotated) per batch
    lam: float = 0.01
    grad_clip: float = 5.0
    clip_scope: str = "subnet"  # joint stages: clip each subnet separately ("subnet") or all together ("global")
    augment: bool = True
    blob_sigma: float = 0.0  # > 0 swaps one-hot pose targets for Gaussian blobs
    eval_tau: float = 0.2

    def __post_init__(self):
        self.supervised_epochs = tuple(int(v) for v in self.supervised_epochs)
        self.semi_composition = tuple(int(v) for v in self.semi_composition)
        budgets = (self.mask_epochs, self.alpha_epochs, self.image_vae_epochs, self.pose_vae_epochs,
                   self.semi_epochs, *self.supervised_epochs)
        if min(budgets) < 0:
            raise ConfigError(f"epoch budgets must be nonnegative, got {budgets}")
        if len(self.supervised_epochs) != 2:
            raise ConfigError("supervised_epochs needs two entries")
        if self.desk_factor <= 0:
            raise ConfigError(f"desk_factor must be positive, got {self.desk_factor}")
        if len(self.semi_composition) != 2 or min(self.semi_composition) < 0:
            raise ConfigError(f"semi_composition must be two nonnegative counts, got {self.semi_composition}")
        if sum(self.semi_composition) != self.batch_size:
            raise ConfigError(f"semi_composition {self.semi_composition} must sum to batch_size {self.batch_size}")
        if self.lam < 0:
            raise ConfigError(f"lam must be nonnegative, got {self.lam}")
        if self.clip_scope not in ("global", "subnet"):
            raise ConfigError(f"clip_scope must be 'global' or 'subnet', got {self.clip_scope!r}")
        if self.eval_window < 1:
            raise ConfigError("eval_window must be at least 1")

    def epochs(self, budget: int) -> int:
        """Desk-scaled budget; a positive budget never scales to zero."""
        return 0 if budget == 0 else max(1, int(round(budget * self.desk_factor)))

    @property
    def window(self) -> int:
        return self.epochs(self.eval_window)


@dataclass
class RunConfig:
    seed: int = 0
    net: NetConfig = field(default_factory=NetConfig)
    data: DataConfig = field(default_factory=DataConfig)
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _coerce(default, value, path: str):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        return tuple(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    return value


def build(cls, raw: dict | None, path: str = ""):
    """Instantiate dataclass ``cls`` from a (partial) nested dict."""
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {raw!r}")
    defaults = cls()
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        where = f" in {path}" if path else ""
        raise ConfigError(f"unknown config key(s){where}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in raw.items():
        default = getattr(defaults, name)
        sub = f"{path}.{name}" if path else name
        if dataclasses.is_dataclass(default):
            kwargs[name] = build(type(default), value, sub)
        else:
            kwargs[name] = _coerce(default, value, sub)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def parse_override(text: str) -> tuple[list[str], object]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, value = text.split("=", 1)
    keys = key.strip().split(".")
    if not all(keys):
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        parsed = yaml.safe_load(value) if value.strip() else ""
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {text!r}: {exc}") from exc
    return keys, parsed


def apply_overrides(raw: dict, overrides) -> dict:
    raw = json.loads(json.dumps(raw))  # deep copy
    for text in overrides or ():
        keys, value = parse_override(text)
        node = raw
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {text!r}: {k} is not a section")
        node[keys[-1]] = value
    return raw


def read_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (ValueError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return raw or {}


def load_config(path=None, overrides=(), seed: int | None = None) -> RunConfig:
    raw = read_file(path) if path else {}
    raw = apply_overrides(raw, overrides)
    if seed is not None:
        raw["seed"] = seed
    return build(RunConfig, raw)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
