"""Named random sub-streams derived from a single master seed.

Each consumer (env, init, exploration, sampling, ...) gets its own
generator so that changing how many draws one consumer makes never shifts
another consumer's sequence.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def make_rng(seed: int, *names: str | int) -> np.random.Generator:
    """Return a PCG64 generator for ``seed`` and a path of stream names.

    >>> a = make_rng(7, "env", 3).random()
    >>> a == make_rng(7, "env", 3).random()
    True
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    key = tuple(stream_key(n) if isinstance(n, str) else int(n) for n in names)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def derive_seed(seed: int, *names: str | int) -> int:
    """Integer seed for a sub-stream, for APIs that take a seed not a generator."""
    return int(make_rng(seed, *names).integers(0, 2**63 - 1))
