"""Flat TOML config files, config hashing, and run manifests.

Every artifact-producing command records a manifest next to its outputs with
the resolved configuration, its hash, the seed, and library versions, so a
run can be reproduced from the manifest alone.
"""

import hashlib
import json
import os
import platform
import sys
import time
from dataclasses import fields

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


def load_config(path):
    """Read a flat key = value TOML file; nested tables are rejected."""
    with open(path, "rb") as f:
        data = tomllib.load(f)
    for key, value in data.items():
        if isinstance(value, dict):
            raise ValueError(f"config must be flat key = value pairs; {key!r} is a table")
    return data


def merge_config(defaults, *layers):
    """Later layers win; None values in a layer leave the key untouched."""
    merged = dict(defaults)
    for layer in layers:
        for key, value in layer.items():
            if value is not None:
                merged[key] = value
    return merged


def apply_to_dataclass(cls, mapping, ignore_extra=False):
    """Instantiate a dataclass from a mapping, rejecting unknown keys."""
    names = {f.name for f in fields(cls)}
    unknown = set(mapping) - names
    if unknown and not ignore_extra:
        raise ValueError(f"unknown config keys for {cls.__name__}: {sorted(unknown)}")
    return cls(**{k: v for k, v in mapping.items() if k in names})


def split_known(cls, mapping):
    """Partition a mapping into (keys of cls, the rest)."""
    names = {f.name for f in fields(cls)}
    mine = {k: v for k, v in mapping.items() if k in names}
    rest = {k: v for k, v in mapping.items() if k not in names}
    return mine, rest


def config_hash(mapping):
    canonical = json.dumps(mapping, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _versions():
    import numpy
    import torch

    from . import __version__

    return {
        "python": platform.python_version(),
        "numpy": numpy.__version__,
        "torch": torch.__version__,
        "titkit": __version__,
    }


def write_run_manifest(out_dir, command, config, seed, extra=None):
    """Record what produced the artifacts in out_dir; returns the path."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "command": command,
        "argv": sys.argv,
        "config": config,
        "config_hash": config_hash(config),
        "seed": seed,
        "versions": _versions(),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(out_dir, "run_manifest.json")
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True, default=str)
        f.write("\n")
    os.replace(tmp, path)
    return path
