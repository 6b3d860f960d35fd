"""Training configuration and its YAML representation.

A config file has the sections ``trainer``, ``noise``, ``backbone``,
``encoder`` and ``data``.  Dotted overrides (``trainer.lambda_fam=0``)
are applied to the raw mapping before validation.
"""
from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple

import yaml

from .backbone import BackboneConfig
from .errors import ConfigError
from .fam import EncoderConfig
from .wia import NoiseConfig, preset

MODES = ("full", "wia_only", "wia_star", "fam_only", "fam_star", "baseline")

# mode -> (corruption, feature loss)
MODE_WIRING = {
    "full": ("wia", "fam"),
    "wia_only": ("wia", None),
    "wia_star": ("direct", None),
    "fam_only": (None, "fam"),
    "fam_star": (None, "fam_star"),
    "baseline": (None, None),
}


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    epochs: int = 200
    batch_size: int = 4
    crop: int = 64
    lambda_fam: float = 0.01
    ema_momentum: float = 0.99
    mode: str = "full"
    seed: int = 0
    checkpoint_every: int = 10
    dtype: str = "float32"
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"trainer.mode must be one of {MODES}, got {self.mode!r}")
        if not (math.isfinite(self.lambda_fam) and self.lambda_fam >= 0):
            raise ConfigError("trainer.lambda_fam must be finite and nonnegative")
        if not self.lr > 0:
            raise ConfigError("trainer.lr must be positive")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if not 0 <= self.ema_momentum <= 1:
            raise ConfigError("trainer.ema_momentum must lie in [0, 1]")
        if self.epochs < 1 or self.batch_size < 1 or self.checkpoint_every < 1:
            raise ConfigError("epochs, batch_size and checkpoint_every must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("trainer.dtype must be float32 or float64")
        if self.crop % 2:
            raise ConfigError(f"trainer.crop must be even, got {self.crop}")
        if self.crop % self.backbone.divisor:
            raise ConfigError(f"trainer.crop must be divisible by {self.backbone.divisor}")
        if self.uses_fam and (self.crop // 2) % self.encoder.input_divisor:
            raise ConfigError(
                f"trainer.crop / 2 must be divisible by 4 * encoder.patch_grid = {self.encoder.input_divisor}"
            )

    @property
    def corruption(self) -> Optional[str]:
        return MODE_WIRING[self.mode][0]

    @property
    def feature_loss(self) -> Optional[str]:
        return MODE_WIRING[self.mode][1]

    @property
    def uses_fam(self) -> bool:
        return self.feature_loss is not None

    def to_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k not in ("noise", "backbone", "encoder")}
        return {
            "trainer": out,
            "noise": self.noise.to_dict(),
            "backbone": self.backbone.to_dict(),
            "encoder": self.encoder.to_dict(),
        }


def _trainer_keys():
    return {f.name for f in fields(TrainConfig)} - {"noise", "backbone", "encoder"}


def parse_override(text: str) -> Tuple[str, Any]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key or any(not part for part in key.split(".")):
        raise ConfigError(f"bad override key {key!r}")
    try:
        value = yaml.safe_load(raw) if raw.strip() else ""
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value in override {text!r}: {exc}") from exc
    return key, value


def apply_overrides(raw: dict, overrides: Iterable[str]) -> dict:
    raw = copy.deepcopy(raw)
    for item in overrides:
        key, value = parse_override(item)
        node = raw
        parts = key.split(".")
        for part in parts[:-1]:
            nxt = node.setdefault(part, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"override {key!r} descends into a non-mapping")
            node = nxt
        node[parts[-1]] = value
    return raw


def _coerce(cls, section: dict, name: str) -> dict:
    """Cast scalar values to the type of the field default.

    YAML reads ``1e-4`` (no decimal point) as a string, so numeric fields are
    converted explicitly; anything unconvertible is a configuration error.
    """
    out = dict(section)
    for f in fields(cls):
        if f.name not in out or not isinstance(f.default, (int, float)) or isinstance(f.default, bool):
            continue
        value = out[f.name]
        if isinstance(value, bool):
            raise ConfigError(f"[{name}] {f.name} must be a number, got {value!r}")
        try:
            out[f.name] = int(value) if type(f.default) is int and float(value).is_integer() else float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"[{name}] {f.name} must be a number, got {value!r}") from None
        if type(f.default) is int and not float(out[f.name]).is_integer():
            raise ConfigError(f"[{name}] {f.name} must be an integer, got {value!r}")
    return out


def _build(cls, section: dict, name: str):
    known = {f.name for f in fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
    try:
        return cls(**_coerce(cls, section, name))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid [{name}] section: {exc}") from exc


def resolve_noise(section: dict) -> NoiseConfig:
    section = dict(section or {})
    name = section.pop("preset", None)
    span = section.pop("span", None)
    if name is not None:
        base = preset(name, seed=int(section.get("seed", 0)), span=float(span or 4096.0))
        section = {**base.to_dict(), **section}
    elif span is not None:
        raise ConfigError("noise.span only applies together with noise.preset")
    return _build(NoiseConfig, section, "noise")


def config_from_dict(raw: dict) -> Tuple[TrainConfig, dict]:
    """Validated :class:`TrainConfig` plus the free-form ``data`` section."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(raw) - {"trainer", "noise", "backbone", "encoder", "data"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    trainer = dict(raw.get("trainer") or {})
    bad = set(trainer) - _trainer_keys()
    if bad:
        raise ConfigError(f"unknown keys in [trainer]: {sorted(bad)}")
    try:
        cfg = TrainConfig(
            **_coerce(TrainConfig, trainer, "trainer"),
            noise=resolve_noise(raw.get("noise")),
            backbone=_build(BackboneConfig, dict(raw.get("backbone") or {}), "backbone"),
            encoder=_build(EncoderConfig, dict(raw.get("encoder") or {}), "encoder"),
        )
    except TypeError as exc:
        raise ConfigError(f"invalid [trainer] section: {exc}") from exc
    return cfg, dict(raw.get("data") or {})


def load_config(path, overrides: Iterable[str] = ()) -> Tuple[TrainConfig, dict, dict]:
    """Returns ``(config, data_section, resolved_mapping)``."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    raw = apply_overrides(raw, overrides)
    cfg, data = config_from_dict(raw)
    resolved = cfg.to_dict()
    resolved["data"] = data
    return cfg, data, resolved


def dump_config(resolved: Dict[str, Any]) -> str:
    return yaml.safe_dump(resolved, sort_keys=True)
