"""One TOML file configuring every stage, plus ``section.key=value`` overrides.

Sections map onto the stage config dataclasses::

    [pyramid]   levels, sigma, seed
    [synth]     SynthConfig
    [refine]    RefinementConfig
    [proposal]  ProposalConfig (sigma comes from [pyramid])
    [losses]    LossWeights
    [trainer]   TrainerConfig
    [backbone]  BackboneConfig (sigma, levels, widths of data come from elsewhere)
    [eval]      EvalConfig

Every key is optional. :meth:`PipelineConfig.to_toml` writes the complete,
normalised form; parsing that output again gives the same text.
"""
from __future__ import annotations

import dataclasses
import sys
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .backbone import BackboneConfig
from .losses import LossWeights
from .metrics import EvalConfig
from .postprocess import ProposalConfig
from .pseudolabel import RefinementConfig
from .synth import SynthConfig
from .trainer import TrainerConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Bad config value; ``where`` names the offending ``section.key``."""

    def __init__(self, where: str, message: str):
        super().__init__(f"config {where}: {message}")
        self.where = where


@dataclass(frozen=True)
class PyramidConfig:
    levels: int = 4
    sigma: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.sigma < 2:
            raise ValueError("sigma must be >= 2")


# keys filled in from other sections or from the data, never read from the file
_DERIVED = {
    "proposal": {"sigma"},
    "backbone": {"sigma", "levels", "d_in", "num_classes"},
}

_SECTIONS: dict[str, type] = {
    "pyramid": PyramidConfig,
    "synth": SynthConfig,
    "refine": RefinementConfig,
    "proposal": ProposalConfig,
    "losses": LossWeights,
    "trainer": TrainerConfig,
    "backbone": BackboneConfig,
    "eval": EvalConfig,
}


@dataclass(frozen=True)
class PipelineConfig:
    pyramid: PyramidConfig = field(default_factory=PyramidConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    refine: RefinementConfig = field(default_factory=RefinementConfig)
    proposal: ProposalConfig = field(default_factory=ProposalConfig)
    losses: LossWeights = field(default_factory=LossWeights)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "PipelineConfig":
        data = dict(data)
        version = data.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError("schema_version", f"unsupported version {version!r} (expected {SCHEMA_VERSION})")
        for name in data:
            if name not in _SECTIONS:
                raise ConfigError(name, f"unknown section (known: {', '.join(_SECTIONS)})")
        pyramid = _build("pyramid", PyramidConfig, data.get("pyramid", {}))
        forced = {
            "proposal": {"sigma": pyramid.sigma},
            "backbone": {"sigma": pyramid.sigma, "levels": pyramid.levels},
        }
        built = {"pyramid": pyramid}
        for name, klass in _SECTIONS.items():
            if name != "pyramid":
                built[name] = _build(name, klass, data.get(name, {}), forced.get(name, {}))
        return cls(**built)

    @classmethod
    def load(cls, path: Optional[str | Path] = None, overrides: Sequence[str] = ()) -> "PipelineConfig":
        data: dict[str, Any] = {}
        if path is not None:
            try:
                data = tomllib.loads(Path(path).read_text(encoding="utf-8"))
            except FileNotFoundError:
                raise ConfigError(str(path), "file not found") from None
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(str(path), f"invalid TOML: {exc}") from None
        for item in overrides:
            apply_override(data, item)
        return cls.from_mapping(data)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"schema_version": SCHEMA_VERSION}
        for name in _SECTIONS:
            section = getattr(self, name)
            skip = _DERIVED.get(name, set())
            values = {}
            for f in dataclasses.fields(section):
                value = getattr(section, f.name)
                if f.name in skip or value is None:
                    continue
                values[f.name] = list(value) if isinstance(value, tuple) else value
            out[name] = values
        return out

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())


def apply_override(data: dict[str, Any], item: str) -> None:
    """Apply one ``section.key=value`` override; ``value`` is parsed as TOML, else kept as text."""
    target, sep, raw = item.partition("=")
    section, dot, key = target.strip().partition(".")
    if not sep or not dot or not section or not key:
        raise ConfigError(item, "override must look like section.key=value")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    data.setdefault(section, {})
    if not isinstance(data[section], dict):
        raise ConfigError(section, "not a table")
    data[section][key] = value


def _build(name: str, klass: type, values: Mapping[str, Any], forced: Mapping[str, Any] = {}):
    if not isinstance(values, Mapping):
        raise ConfigError(name, "section must be a table")
    hints = typing.get_type_hints(klass)
    known = {f.name for f in dataclasses.fields(klass)}
    kwargs = {}
    for key, value in values.items():
        where = f"{name}.{key}"
        if key not in known:
            raise ConfigError(where, "unknown key")
        if key in _DERIVED.get(name, ()):
            raise ConfigError(where, "derived from other settings; not configurable here")
        kwargs[key] = _coerce(where, hints[key], value)
    kwargs.update(forced)
    try:
        return klass(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(name, str(exc)) from None


def _coerce(where: str, hint, value):
    origin, args = typing.get_origin(hint), typing.get_args(hint)
    if origin is typing.Union and type(None) in args:
        inner = [a for a in args if a is not type(None)][0]
        return _coerce(where, inner, value)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(where, f"expected a list, got {value!r}")
        return tuple(_coerce(where, args[0], v) for v in value)
    if origin is typing.Literal:
        if value not in args:
            raise ConfigError(where, f"expected one of {list(args)}, got {value!r}")
        return value
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(where, f"expected a boolean, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise ConfigError(where, f"expected an integer, got {value!r}")
        return int(value)
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(where, f"expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(where, f"expected a string, got {value!r}")
        return value
    return value
