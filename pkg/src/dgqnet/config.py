"""Layered run configuration: built-in defaults, an optional TOML file,
then command-line `--set section.key=value` overrides, in that order.

Every field has a default, so an empty file (or none at all) is a valid
configuration.  Unknown sections or keys fail loudly rather than being
ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # 3.10
    import tomli as tomllib

from .domainshift import TRAIN_DOMAINS, UNSEEN_DOMAIN, DomainSpec
from .errors import ConfigError
from .trainer import TrainConfig


@dataclass
class DataConfig:
    train_count: int = 600
    test_count: int = 120
    image_size: int = 64
    pos_fraction: float = 0.5
    seed: int = 0


@dataclass
class ModelConfig:
    feature_dim: int = 256
    stem_channels: int = 16
    qubits: int = 8
    depth: int = 2
    alpha: float = 0.1
    classes: int = 2


@dataclass
class TTAConfig:
    eta: float = 0.1
    passes: int = 1
    batch_size: int = 32


@dataclass
class EvalConfig:
    n_boot: int = 500
    seed: int = 0


@dataclass
class DomainsConfig:
    """Per-domain perturbation ranges, overridable from `[domains.dN]`
    tables.  d0..d2 are the training tiers, d3 the held-out domain."""

    d0: DomainSpec = field(default_factory=lambda: TRAIN_DOMAINS[0])
    d1: DomainSpec = field(default_factory=lambda: TRAIN_DOMAINS[1])
    d2: DomainSpec = field(default_factory=lambda: TRAIN_DOMAINS[2])
    d3: DomainSpec = field(default_factory=lambda: UNSEEN_DOMAIN)

    def train_specs(self):
        return [self.d0, self.d1, self.d2]

    def all_specs(self):
        return [self.d0, self.d1, self.d2, self.d3]


@dataclass
class Config:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    tta: TTAConfig = field(default_factory=TTAConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    domains: DomainsConfig = field(default_factory=DomainsConfig)


_SECTIONS = ("data", "domains", "eval", "model", "train", "tta")
_DOMAIN_KEYS = ("brightness", "contrast", "sharpen", "noise")


def dgq_kwargs(model: ModelConfig) -> dict:
    """Constructor keywords for the full model, minus flags and seed."""
    return dict(feature_dim=model.feature_dim, stem_channels=model.stem_channels,
                qubits=model.qubits, depth=model.depth, alpha=model.alpha,
                classes=model.classes)


def _check_value(section: str, key: str, default, value):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{section}.{key} must be a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{section}.{key} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{section}.{key} must be a number, got {value!r}")
        return float(value)
    return value


def _apply_section(current, section: str, values: dict):
    valid = {f.name: getattr(current, f.name) for f in fields(current)}
    updates = {}
    for key, value in values.items():
        if key not in valid:
            raise ConfigError(
                f"unknown key {section}.{key}; valid keys: {sorted(valid)}"
            )
        updates[key] = _check_value(section, key, valid[key], value)
    try:
        return replace(current, **updates)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad [{section}] values: {exc}") from exc


def _range_pair(where: str, value):
    ok = (isinstance(value, list) and len(value) == 2
          and all(isinstance(v, (int, float)) and not isinstance(v, bool)
                  for v in value))
    if not ok:
        raise ConfigError(f"{where} must be a two-number array, got {value!r}")
    return (float(value[0]), float(value[1]))


def _apply_domain(name: str, current: DomainSpec, values: dict) -> DomainSpec:
    if not isinstance(values, dict):
        raise ConfigError(f"[domains.{name}] must be a table")
    updates = {}
    for key, value in values.items():
        if key not in _DOMAIN_KEYS:
            raise ConfigError(
                f"unknown key domains.{name}.{key}; valid keys: {list(_DOMAIN_KEYS)}"
            )
        where = f"domains.{name}.{key}"
        if key == "brightness" and isinstance(value, list) and value \
                and isinstance(value[0], list):
            updates[key] = tuple(_range_pair(where, pair) for pair in value)
        else:
            updates[key] = _range_pair(where, value)
    try:
        return replace(current, **updates)
    except ConfigError as exc:
        raise ConfigError(f"domains.{name}: {exc}") from exc


def _apply_domains(current: DomainsConfig, values: dict) -> DomainsConfig:
    valid = {f.name: getattr(current, f.name) for f in fields(current)}
    updates = {}
    for name, table in values.items():
        if name not in valid:
            raise ConfigError(
                f"unknown key domains.{name}; valid keys: {sorted(valid)}"
            )
        updates[name] = _apply_domain(name, valid[name], table)
    return replace(current, **updates)


def _parse_override_value(section: str, key: str, default, text: str):
    if isinstance(default, bool):
        lowered = text.lower()
        if lowered in ("true", "yes", "1"):
            return True
        if lowered in ("false", "no", "0"):
            return False
        raise ConfigError(f"{section}.{key} expects a boolean, got {text!r}")
    try:
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{section}.{key} expects a number, got {text!r}") from None
    return text


def apply_overrides(config: Config, overrides: Sequence[str]) -> Config:
    """Apply `section.key=value` strings on top of a config."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not section.key=value")
        target, text = item.split("=", 1)
        if target.count(".") != 1:
            raise ConfigError(f"override {item!r} is not section.key=value")
        section, key = target.split(".")
        if section == "domains":
            # ranges are arrays; the flat key=value grammar cannot carry them
            raise ConfigError(
                "domain ranges cannot be set with --set; "
                "use a [domains.dN] table in the config file"
            )
        if section not in _SECTIONS:
            raise ConfigError(
                f"unknown section {section!r}; valid sections: {_SECTIONS}"
            )
        current = getattr(config, section)
        valid = {f.name: getattr(current, f.name) for f in fields(current)}
        if key not in valid:
            raise ConfigError(
                f"unknown key {section}.{key}; valid keys: {sorted(valid)}"
            )
        value = _parse_override_value(section, key, valid[key], text)
        config = replace(config, **{
            section: _apply_section(current, section, {key: value})
        })
    return config


def load_config(path=None, overrides: Sequence[str] = ()) -> Config:
    """Defaults, then the TOML file at path (if given), then overrides."""
    config = Config()
    if path is not None:
        path = Path(path)
        try:
            with open(path, "rb") as f:
                parsed = tomllib.load(f)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            # tomllib messages carry line and column positions
            raise ConfigError(f"{path}: {exc}") from exc
        for section, values in parsed.items():
            if section not in _SECTIONS:
                raise ConfigError(
                    f"{path}: unknown section [{section}]; valid: {_SECTIONS}"
                )
            if not isinstance(values, dict):
                raise ConfigError(f"{path}: [{section}] must be a table")
            if section == "domains":
                config = replace(config,
                                 domains=_apply_domains(config.domains, values))
            else:
                config = replace(config, **{
                    section: _apply_section(getattr(config, section), section,
                                            values)
                })
    return apply_overrides(config, overrides)
