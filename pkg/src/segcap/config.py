"""Run configuration files: ``key = value`` lines, ``#`` comments.

Each command declares its key schema; unknown keys are rejected. The fully
resolved configuration (defaults filled in, seed and desk preset applied)
is echoed into the output directory so a run can be reproduced from its
own artifacts.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError


def parse_kv_file(path) -> dict[str, str]:
    out: dict[str, str] = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


@dataclass
class Field:
    conv: type
    default: object = None
    required: bool = False


def _convert(key: str, raw: str, conv):
    try:
        if conv is bool:
            if raw not in ("true", "false", "True", "False"):
                raise ValueError(raw)
            return raw in ("true", "True")
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {conv.__name__}") from exc


def resolve(raw: dict[str, str], schema: dict[str, Field],
            overrides: dict[str, object] | None = None) -> dict[str, object]:
    """Validate raw keys against the schema and fill defaults."""
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    out: dict[str, object] = {}
    for key, spec in schema.items():
        if key in raw:
            out[key] = _convert(key, raw[key], spec.conv)
        elif spec.required:
            raise ConfigError(f"missing required config key {key!r}")
        else:
            out[key] = spec.default
    if overrides:
        for key, value in overrides.items():
            if value is not None:
                out[key] = value
    return out


def echo(resolved: dict[str, object], out_dir) -> Path:
    path = Path(out_dir) / "config.resolved"
    lines = []
    for key in sorted(resolved):
        value = resolved[key]
        if value is None:
            continue
        lines.append(f"{key} = {value}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
