"""Binary checkpoints for trained networks.

A checkpoint holds every persistent array of a network (weights, biases,
batch-norm statistics) in layer order, plus a JSON config blob so the
caller can rebuild the architecture before loading. float64 arrays
round-trip bit-exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .layers import Layer

CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    """Checkpoint file is missing, malformed, or does not fit the network."""


def save_checkpoint(net: Layer, path: str | Path, config: dict | None = None) -> None:
    arrays = {f"var_{i:04d}": v for i, v in enumerate(net.variables())}
    np.savez(
        Path(path),
        version=np.array(CHECKPOINT_VERSION),
        config=np.array(json.dumps(config or {})),
        **arrays,
    )


def load_checkpoint(net: Layer, path: str | Path) -> dict:
    """Fill net's variables in place from the file; returns the config."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"no checkpoint at {path}")
    with np.load(path, allow_pickle=False) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        config = json.loads(str(data["config"]))
        variables = net.variables()
        keys = [k for k in data.files if k.startswith("var_")]
        if len(keys) != len(variables):
            raise CheckpointError(
                f"checkpoint has {len(keys)} arrays, network has {len(variables)}"
            )
        for i, var in enumerate(variables):
            stored = data[f"var_{i:04d}"]
            if stored.shape != var.shape:
                raise CheckpointError(
                    f"array {i} shape {stored.shape} does not match network shape {var.shape}"
                )
            var[...] = stored
    return config


def read_config(path: str | Path) -> dict:
    """The config blob alone, without needing a network."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"no checkpoint at {path}")
    with np.load(path, allow_pickle=False) as data:
        return json.loads(str(data["config"]))
