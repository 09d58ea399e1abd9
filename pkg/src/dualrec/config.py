"""Flat ``key = value`` configuration files."""
from __future__ import annotations

from pathlib import Path

from .errors import ConfigError


def parse_kv(text: str, source="<config>") -> dict:
    out = {}
    for line_no, line in enumerate(text.splitlines(), 1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ConfigError(f"{source}:{line_no}: expected 'key = value'")
        key, value = (part.strip() for part in s.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{line_no}: empty key")
        out[key] = value
    return out


def read_kv(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_kv(path.read_text(encoding="utf-8"), source=str(path))


def format_kv(values: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in values.items())


def write_kv(path, values: dict):
    Path(path).write_text(format_kv(values), encoding="utf-8")


def coerce(value: str, like):
    """Convert a config string to the type of the default ``like``."""
    if isinstance(like, bool):
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    if like is None and value.lower() == "none":
        return None
    return value
