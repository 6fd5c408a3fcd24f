"""Declarative key/value config files.

Format: one `key = value` per line, `#` starts a comment, blank lines are
ignored. Consumers declare their known keys; unknown keys are a hard config
error so typos never pass silently. CLI flags override file values.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

from .errors import ConfigError


def read_kv_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    out: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected `key = value`, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def reject_unknown(mapping: Mapping[str, str], known: set[str], context: str) -> None:
    unknown = sorted(set(mapping) - known)
    if unknown:
        raise ConfigError(f"unknown {context} config keys: {', '.join(unknown)}")


def get_int(mapping: Mapping[str, str], key: str, default: int) -> int:
    if key not in mapping:
        return default
    try:
        return int(mapping[key])
    except ValueError:
        raise ConfigError(f"config key {key!r}: expected integer, got {mapping[key]!r}") from None


def get_float(mapping: Mapping[str, str], key: str, default: float) -> float:
    if key not in mapping:
        return default
    try:
        return float(mapping[key])
    except ValueError:
        raise ConfigError(f"config key {key!r}: expected number, got {mapping[key]!r}") from None


def get_str(mapping: Mapping[str, str], key: str, default: str) -> str:
    return mapping.get(key, default)
