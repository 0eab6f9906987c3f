"""Flat ``key=value`` configuration files.

Blank lines and lines starting with ``#`` are ignored; keys may use ``-`` or
``_`` interchangeably and are normalized to ``_``.
"""
from .errors import ConfigError


def parse_kv_text(text, source="<string>"):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def parse_kv_file(path):
    try:
        with open(path) as fh:
            return parse_kv_text(fh.read(), source=str(path))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def format_kv(mapping):
    return "".join(f"{k}={v}\n" for k, v in mapping.items())


def parse_bool(value):
    v = str(value).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")
