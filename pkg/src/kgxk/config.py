"""Declarative run configuration: YAML tree, strict keys, flag overrides."""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field

import yaml

from .backbone import BackboneConfig
from .errors import ConfigError
from .explainer import ExplainerHParams
from .perturb import DropSchedule
from .protocol import ProtocolHParams
from .walk import PPRConfig

DEFAULT_BUDGETS = (25, 50, 75, 100, 300, 500)

_BLOCKS = {
    "backbone": BackboneConfig,
    "evaluator": DropSchedule,
    "explainer": ExplainerHParams,
    "ppr": PPRConfig,
    "protocol": ProtocolHParams,
}


@dataclass(frozen=True)
class RunConfig:
    dataset: str = "."
    out: str | None = None  # None -> $KGXK_OUT, else ./runs
    run_id: str | None = None
    seed: int = 0
    budgets: tuple[int, ...] = DEFAULT_BUDGETS
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    evaluator: DropSchedule = field(default_factory=lambda: DropSchedule.uniform(0.3))
    explainer: ExplainerHParams = field(default_factory=ExplainerHParams)
    ppr: PPRConfig = field(default_factory=lambda: PPRConfig(l=20))
    protocol: ProtocolHParams = field(default_factory=ProtocolHParams)

    def __post_init__(self):
        budgets = tuple(int(k) for k in self.budgets)
        if not budgets or any(k < 1 for k in budgets):
            raise ConfigError(f"budgets must be positive integers, got {self.budgets}")
        object.__setattr__(self, "budgets", budgets)
        if not isinstance(self.seed, int):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")


def _build_block(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"config section {path!r} must be a mapping, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown config key {path}.{unknown[0]!r}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"bad config section {path!r}: {exc}") from exc


def config_from_dict(data: dict) -> RunConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"config root must be a mapping, got {type(data).__name__}")
    top_names = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(data) - top_names)
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}")
    kwargs = {}
    for key, value in data.items():
        if key in _BLOCKS:
            kwargs[key] = _build_block(_BLOCKS[key], value, key)
        else:
            kwargs[key] = value
    try:
        return RunConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad config: {exc}") from exc


def config_to_dict(cfg: RunConfig) -> dict:
    data = dataclasses.asdict(cfg)
    data["budgets"] = list(cfg.budgets)
    return data


_SCI_FLOAT = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)[eE][+-]?\d+$")


def _parse_scalar(text: str):
    try:
        value = yaml.safe_load(text)
    except yaml.YAMLError:
        return text
    # YAML 1.1 keeps dotless exponent floats ("5e-3") as strings
    if isinstance(value, str) and _SCI_FLOAT.match(value):
        return float(value)
    return value


def apply_overrides(data: dict, overrides) -> dict:
    """Dotted-path assignments like ('backbone.epochs', '40') onto a raw dict."""
    for dotted, raw in overrides:
        parts = dotted.split(".")
        if not all(parts):
            raise ConfigError(f"bad override key {dotted!r}")
        node = data
        for part in parts[:-1]:
            nxt = node.setdefault(part, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"override {dotted!r} descends into a scalar")
            node = nxt
        node[parts[-1]] = _parse_scalar(raw) if isinstance(raw, str) else raw
    return data


def load_config(path=None, overrides=()) -> RunConfig:
    """Config file plus dotted overrides; missing file means pure defaults."""
    data: dict = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                loaded = yaml.safe_load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file {path} is not valid YAML: {exc}")
        if loaded is not None:
            if not isinstance(loaded, dict):
                raise ConfigError(f"config file {path} must hold a mapping")
            data = loaded
    apply_overrides(data, overrides)
    return config_from_dict(data)
