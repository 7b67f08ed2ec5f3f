"""Resolved run configuration: defaults, an optional ``key = value`` text file
with one section per parameter group, then command-line overrides."""

from __future__ import annotations

import configparser
import dataclasses
import json
import os
from dataclasses import dataclass, field

from .fusion import FusionConfig
from .gf import GFParams
from .lk import LKParams, ShiTomasiParams
from .pipeline import FLOW_METHODS, PipelineConfig
from .train import TrainParams

# section name -> RunConfig attribute holding that parameter group
SECTIONS = {
    "gf": "gf",
    "shi_tomasi": "shi_tomasi",
    "lk": "lk",
    "fusion": "fusion",
    "train": "train",
}
RUN_KEYS = ("flow_method", "timesteps", "repeat", "threads", "seed", "weights", "layout")


class ConfigError(ValueError):
    pass


def default_threads() -> int:
    return os.cpu_count() or 1


@dataclass(frozen=True)
class RunConfig:
    flow_method: str = "gf"
    gf: GFParams = field(default_factory=GFParams)
    shi_tomasi: ShiTomasiParams = field(default_factory=ShiTomasiParams)
    lk: LKParams = field(default_factory=LKParams)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    train: TrainParams = field(default_factory=TrainParams)
    timesteps: tuple = (0.5,)
    repeat: int = 1
    threads: int = field(default_factory=default_threads)
    seed: int = 0
    weights: str | None = None
    layout: str = "triplet-dirs"

    def __post_init__(self):
        if self.flow_method not in FLOW_METHODS:
            raise ConfigError(f"flow method must be one of {FLOW_METHODS}, got {self.flow_method!r}")
        ts = tuple(float(t) for t in self.timesteps)
        if not ts:
            raise ConfigError("at least one timestep is required")
        for t in ts:
            if not 0.0 < t < 1.0:
                raise ConfigError(f"timestep {t} outside (0, 1)")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ConfigError(f"timesteps must be strictly increasing, got {list(ts)}")
        object.__setattr__(self, "timesteps", ts)
        if self.repeat < 1:
            raise ConfigError("repeat must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(self.flow_method, self.gf, self.shi_tomasi, self.lk, self.fusion)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["timesteps"] = list(self.timesteps)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _coerce(value, like, key):
    """Parse ``value`` (a string from a file or flag) to the type of ``like``."""
    if not isinstance(value, str):
        return value
    try:
        if isinstance(like, bool):
            low = value.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if isinstance(like, int):
            return int(value)
        if isinstance(like, float):
            return float(value)
        if isinstance(like, tuple):
            return tuple(float(p) for p in value.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {type(like).__name__}") from None
    if like is None and value.strip().lower() in ("", "none"):
        return None
    return value.strip()


def _group_fields(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)}


def apply_values(base: RunConfig, values: dict) -> RunConfig:
    """Return ``base`` with ``values`` applied; keys are ``section.key`` for
    parameter groups or bare run keys (``flow_method``, ``timesteps``, ...)."""
    run = _group_fields(base)
    groups = {s: _group_fields(getattr(base, attr)) for s, attr in SECTIONS.items()}
    for full_key, value in values.items():
        if "." in full_key:
            section, key = full_key.split(".", 1)
            if section == "run":
                section = None
        else:
            section, key = None, full_key
        if section is None:
            if key not in RUN_KEYS:
                raise ConfigError(f"unknown run key {key!r}")
            run[key] = _coerce(value, run[key], key)
            continue
        if section not in groups:
            raise ConfigError(f"unknown section {section!r}")
        if key not in groups[section]:
            raise ConfigError(f"unknown key {key!r} in section [{section}]")
        groups[section][key] = _coerce(value, groups[section][key], full_key)
    try:
        built = {attr: type(getattr(base, attr))(**groups[s]) for s, attr in SECTIONS.items()}
        run.update(built)
        return RunConfig(**run)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def read_config_file(path) -> dict:
    """Flatten an ini-style file to ``{"section.key": "value"}``. Keys in a
    ``[run]`` section (or before any section) are run keys."""
    parser = configparser.ConfigParser(default_section="__defaults__")
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        if not text.lstrip().startswith("["):
            text = "[run]\n" + text
        parser.read_string(text, source=os.fspath(path))
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    out = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            out[key if section == "run" else f"{section}.{key}"] = value
    return out


def from_dict(d: dict) -> RunConfig:
    """Rebuild a config from :meth:`RunConfig.to_dict` output (the echo).
    Keys that are not configuration (report annotations) are ignored."""
    values = {k: v for k, v in d.items() if k in RUN_KEYS}
    if "timesteps" in values:
        values["timesteps"] = tuple(values["timesteps"])
    for s, attr in SECTIONS.items():
        for k, v in d.get(attr, {}).items():
            values[f"{s}.{k}"] = v
    return apply_values(RunConfig(), values)


def resolve(config_file=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the file, then ``overrides`` (flags win)."""
    cfg = RunConfig()
    if config_file:
        cfg = apply_values(cfg, read_config_file(config_file))
    if overrides:
        cfg = apply_values(cfg, overrides)
    return cfg
