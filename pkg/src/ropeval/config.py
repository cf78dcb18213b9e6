"""Flat ``key = value`` configuration files for :class:`ExperimentConfig`.

Blank lines and ``#`` comments are ignored. Keys are the config field names
(``lambda`` is accepted for ``lam``). Tuple-valued fields take
comma-separated lists, booleans take true/false/1/0, and ``none`` clears an
optional field.
"""

from __future__ import annotations

import dataclasses
import typing

from .errors import ConfigError, ParseError
from .harness import ExperimentConfig

ALIASES = {"lambda": "lam"}
_INT_TUPLES = {"checkpoints"}
_STR_TUPLES = {"sweep_method", "sweep_noise", "sweep_rate"}


def field_types() -> dict:
    hints = typing.get_type_hints(ExperimentConfig)
    return {f.name: hints[f.name] for f in dataclasses.fields(ExperimentConfig)}


def _to_float(text: str) -> float:
    return float(text.replace("_", ""))


def _to_int(text: str) -> int:
    value = float(text.replace("_", ""))
    if not value.is_integer():
        raise ValueError(f"expected an integer, got {text!r}")
    return int(value)


def parse_value(key: str, text: str):
    """Convert the string ``text`` to the type of config field ``key``."""
    key = ALIASES.get(key, key)
    types = field_types()
    if key not in types:
        raise ConfigError(f"unknown configuration key {key!r}")
    tp = types[key]
    text = text.strip()
    args = typing.get_args(tp)
    if type(None) in args:
        if text.lower() in ("none", ""):
            return None
        tp = next(a for a in args if a is not type(None))
    try:
        if tp is bool:
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(f"expected a boolean, got {text!r}")
            return low in ("true", "1", "yes")
        if tp is int:
            return _to_int(text)
        if tp is float:
            return _to_float(text)
        if tp is tuple:
            items = [t for t in text.replace(" ", "").split(",") if t]
            if key in _STR_TUPLES:
                return tuple(items)
            conv = _to_int if key in _INT_TUPLES else _to_float
            return tuple(conv(t) for t in items)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None
    return text


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ParseError(f"{source}, line {line_no}: expected 'key = value'")
        key = ALIASES.get(key.strip(), key.strip())
        try:
            values[key] = parse_value(key, value)
        except ConfigError as exc:
            raise ParseError(f"{source}, line {line_no}: {exc}") from None
    return values


def load_config(path, **overrides) -> ExperimentConfig:
    with open(path) as fh:
        values = parse_config_text(fh.read(), str(path))
    values.update(overrides)
    return ExperimentConfig(**values)


def dump_config(config: ExperimentConfig) -> str:
    lines = []
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        if isinstance(value, tuple):
            value = ", ".join(str(v) if isinstance(v, str) else repr(v) for v in value)
        elif value is None:
            value = "none"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
