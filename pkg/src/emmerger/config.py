"""Plain ``key = value`` config files.

One setting per line, ``#`` starts a comment, blank lines are ignored.
Values are coerced to the type of the matching dataclass field.
"""
from __future__ import annotations

import dataclasses
import typing
from enum import Enum
from pathlib import Path
from typing import Any, Union


class ConfigError(ValueError):
    pass


def read_key_values(path: Union[str, Path]) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep or not key.strip():
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            values[key.strip()] = value.strip()
    return values


def _coerce(kind: Any, text: str) -> Any:
    origin = typing.get_origin(kind)
    if origin is Union:
        args = [a for a in typing.get_args(kind) if a is not type(None)]
        if text.lower() in ("", "none"):
            return None
        return _coerce(args[0], text)
    if isinstance(kind, type) and issubclass(kind, Enum):
        return kind(text)
    if kind is bool:
        return text.lower() in ("1", "true", "yes", "on")
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    return text


def coerce_fields(cls: type, raw: dict[str, str]) -> dict[str, Any]:
    """Map raw strings onto ``cls``'s dataclass fields, rejecting unknown keys."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    out = {}
    for key, text in raw.items():
        if key not in names:
            raise ConfigError(f"unknown setting {key!r} for {cls.__name__}")
        try:
            out[key] = _coerce(hints[key], text)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {text!r}") from exc
    return out
