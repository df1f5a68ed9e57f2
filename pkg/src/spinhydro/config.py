"""Run configuration: TOML/JSON files with environment overrides."""
import hashlib
import json
import os
from dataclasses import fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

ENV_PREFIX = "SPINHYDRO_"


class ConfigError(ValueError):
    """Invalid or unreadable configuration."""


def _parse_env_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def env_overrides(environ=None):
    """Nested overrides from ``SPINHYDRO_SECTION__KEY=value`` variables.

    Keys are lower-cased; ``__`` separates nesting levels. Values are
    parsed as JSON when possible, else kept as strings.
    """
    environ = os.environ if environ is None else environ
    out = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        path = name[len(ENV_PREFIX):].lower().split("__")
        node = out
        for key in path[:-1]:
            node = node.setdefault(key, {})
        node[path[-1]] = _parse_env_value(value)
    return out


def merge(base, extra):
    """Recursive dict merge; ``extra`` wins."""
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path=None, environ=None):
    """Read a TOML or JSON config and apply environment overrides.

    Returns
    -------
    config : dict
    raw : str
        The file text, for embedding in outputs.
    digest : str
        SHA-256 of the raw text plus the applied overrides.
    """
    raw = ""
    cfg = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        raw = p.read_text()
        try:
            cfg = json.loads(raw) if p.suffix == ".json" else tomllib.loads(raw)
        except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"{p}: {exc}") from exc
    over = env_overrides(environ)
    cfg = merge(cfg, over)
    h = hashlib.sha256(raw.encode())
    h.update(json.dumps(over, sort_keys=True).encode())
    return cfg, raw, h.hexdigest()


def build(cls, table, section, converters=None):
    """Instantiate a dataclass from a config table with readable errors."""
    table = dict(table or {})
    names = {f.name for f in fields(cls)}
    unknown = set(table) - names
    if unknown:
        raise ConfigError(f"[{section}] unknown keys: {', '.join(sorted(unknown))}")
    for key, conv in (converters or {}).items():
        if key in table:
            try:
                table[key] = conv(table[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from exc
    try:
        return cls(**table)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from exc


def require(table, key, section):
    if key not in table:
        raise ConfigError(f"[{section}] missing required key '{key}'")
    return table[key]
