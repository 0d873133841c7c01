"""Seeded random streams.

All randomness in the toolkit flows from one root seed through named
sub-streams so components (simulation, splitting, weight init, dropout,
sampling) can be re-seeded independently without coupling their draws.
"""

from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("sim", "split", "init", "dropout", "sampler", "shuffle", "data")


def stream(root_seed: int, name: str) -> np.random.Generator:
    """Generator for the named sub-stream of ``root_seed``.

    Same (seed, name) always yields an identical sequence; distinct names
    yield statistically independent sequences.
    """
    if root_seed < 0:
        raise ValueError(f"seed must be non-negative, got {root_seed}")
    tag = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([root_seed, tag]))
