"""Deterministic random-stream derivation.

All randomness in the package flows from a single root seed. A child stream
is addressed by a path of labels and indices: string labels are mapped to
uint32 via crc32, integers are used as-is, and the resulting tuple becomes
the ``spawn_key`` of a :class:`numpy.random.SeedSequence`. The rule is stable
across platforms and numpy versions, so any (seed, path) pair identifies the
same stream everywhere.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_part(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    value = int(part)
    if value < 0:
        raise ValueError("stream path indices must be non-negative")
    return value & 0xFFFFFFFF


def substream(seed: int, *path) -> np.random.Generator:
    """Return the generator addressed by ``(seed, *path)``."""
    spawn_key = tuple(_key_part(p) for p in path)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key))
