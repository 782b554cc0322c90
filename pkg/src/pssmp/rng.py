"""Seedable, splittable counter-based random streams.

Every stream is a Philox generator keyed by a ``SeedSequence`` built from
the user seed plus an integer key path, so a stream depends only on
``(seed, *key)`` and never on scheduling or thread count.
"""

from __future__ import annotations

import zlib

import numpy as np

# Purposes inside one simulation block. Keeping them on separate streams
# lets runs from different initial states share Brownian increments.
BROWNIAN = 0
JUMPS = 1
FLOOR = 2


def _as_int(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("stream key parts must be non-negative")
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def stream(seed: int, *key) -> np.random.Generator:
    """Return the Philox stream addressed by ``(seed, *key)``.

    Key parts may be non-negative ints or strings (hashed with CRC32).
    """
    entropy = [_as_int(seed)] + [_as_int(k) for k in key]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def block_streams(seed: int, key, block: int):
    """The (brownian, jumps, floor) triple for one block of paths."""
    return tuple(stream(seed, key, block, purpose) for purpose in (BROWNIAN, JUMPS, FLOOR))
