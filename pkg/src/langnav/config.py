"""Configuration loading, deep-merge of overrides, and config hashing."""

from __future__ import annotations

import hashlib
import json
from importlib import resources

from .errors import UsageError


def default_config() -> dict:
    text = resources.files("langnav.data").joinpath("default_config.json").read_text()
    return json.loads(text)


def deep_merge(base: dict, overrides: dict) -> dict:
    out = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path: str | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then the JSON file at `path`, then explicit overrides."""
    cfg = default_config()
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except FileNotFoundError as exc:
            raise UsageError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file is not valid JSON: {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise UsageError(f"config root must be a JSON object: {path}")
        cfg = deep_merge(cfg, user)
    if overrides:
        cfg = deep_merge(cfg, overrides)
    return cfg


def config_hash(cfg: dict) -> str:
    """Stable 12-hex-digit digest of a config for output file headers."""
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]
