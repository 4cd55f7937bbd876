"""Configuration parsing: documented defaults, optional JSON file values and
command-line flags, in increasing priority."""
from __future__ import annotations

import difflib
import json
import os
from dataclasses import dataclass, field
from typing import Any, Optional

from .errors import ConfigError, UnknownKey


class ConfigTypeError(ConfigError):
    def __init__(self, key, expected, value):
        self.key = key
        super().__init__(f"key {key!r} expects {expected}, got {value!r}")


@dataclass(frozen=True)
class Option:
    type: Any
    default: Any
    help: str = ""


# keys every command accepts
COMMON = {
    "seed": Option(int, None, "master seed; drawn from OS entropy and recorded when absent"),
    "out": Option(str, None, "output directory"),
    "threads": Option(int, 1, "worker threads; results do not depend on it"),
    "format": Option(str, "jsonl", "record format, csv or jsonl"),
}


@dataclass
class Config:
    command: str
    values: dict
    master_seed: int
    seed_source: str
    overridden: list = field(default_factory=list)

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    def to_json(self):
        return {"command": self.command, "values": self.values, "master_seed": self.master_seed,
                "seed_source": self.seed_source, "overridden_by_flags": self.overridden}


def unknown_key(key, valid):
    near = difflib.get_close_matches(key, sorted(valid), n=1, cutoff=0.5)
    return UnknownKey(key, near[0] if near else None)


def _coerce(key, opt: Option, value):
    if value is None:
        return None
    t = opt.type
    if t is bool and isinstance(value, bool):
        return value
    if t is int:
        if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
            raise ConfigTypeError(key, "an integer", value)
        try:
            return int(value)
        except (TypeError, ValueError):
            raise ConfigTypeError(key, "an integer", value) from None
    if t is float:
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigTypeError(key, "a number", value) from None
    if t is list:
        if isinstance(value, str):
            value = [int(x) if x.strip().lstrip("-").isdigit() else float(x) for x in value.split(",")]
        if not isinstance(value, (list, tuple)):
            raise ConfigTypeError(key, "a list", value)
        return list(value)
    if t is dict:
        if isinstance(value, str):
            value = json.loads(value)
        if not isinstance(value, dict):
            raise ConfigTypeError(key, "a mapping", value)
        return value
    if not isinstance(value, t):
        raise ConfigTypeError(key, t.__name__, value)
    return value


def entropy_seed() -> int:
    return int.from_bytes(os.urandom(8), "little") >> 1


def parse_config(command: str, schema: dict, flags: Optional[dict] = None, file=None) -> Config:
    """Merge ``schema`` defaults, file values (a path or a mapping) and flags.

    Flags set to ``None`` count as absent. Unknown keys raise ``UnknownKey``
    naming the closest valid key.
    """
    full = dict(COMMON)
    full.update(schema)
    values = {k: opt.default for k, opt in full.items()}
    from_file = {}
    if file is not None:
        if isinstance(file, (str, os.PathLike)):
            try:
                with open(file) as fh:
                    from_file = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file is not valid JSON: {exc}") from None
        else:
            from_file = dict(file)
        if not isinstance(from_file, dict):
            raise ConfigError("config file must hold a JSON object")
    flags = {k: v for k, v in (flags or {}).items() if v is not None}
    for source in (from_file, flags):
        for k in source:
            if k not in full:
                raise unknown_key(k, full)
    overridden = sorted(k for k in flags if k in from_file and from_file[k] != flags[k])
    for source in (from_file, flags):
        for k, v in source.items():
            values[k] = _coerce(k, full[k], v)
    if values["format"] not in ("csv", "jsonl"):
        raise ConfigTypeError("format", "csv or jsonl", values["format"])
    if values["threads"] is not None and values["threads"] < 1:
        raise ConfigTypeError("threads", "a positive integer", values["threads"])
    if values["seed"] is None:
        seed, src = entropy_seed(), "entropy"
    else:
        seed, src = int(values["seed"]), ("flag" if "seed" in flags else "file")
    values["seed"] = seed
    return Config(command, values, seed, src, overridden)


def describe(schema: dict) -> str:
    full = dict(COMMON)
    full.update(schema)
    return "\n".join(f"  {k} = {opt.default!r}  {opt.help}" for k, opt in sorted(full.items()))
