"""Flat ``key = value`` text files used for phantom specs and pipeline configs."""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError


def parse_key_values(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines. ``#`` starts a comment; blank lines are skipped."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value.strip()
    return out


def read_key_values(path: str | Path) -> dict[str, str]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_key_values(text)


def format_key_values(items: dict[str, object]) -> str:
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in items.items())


def _fmt(v: object) -> str:
    if isinstance(v, (tuple, list)):
        return " ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def as_floats(value: str, n: int | None = None, key: str = "") -> tuple[float, ...]:
    try:
        vals = tuple(float(x) for x in value.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"{key}: expected numbers, got {value!r}") from exc
    if n is not None and len(vals) != n:
        raise ConfigError(f"{key}: expected {n} values, got {len(vals)}")
    return vals


def as_ints(value: str, n: int | None = None, key: str = "") -> tuple[int, ...]:
    vals = as_floats(value, n, key)
    if any(v != int(v) for v in vals):
        raise ConfigError(f"{key}: expected integers, got {value!r}")
    return tuple(int(v) for v in vals)


def as_bool(value: str, key: str = "") -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")
