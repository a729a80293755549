"""Counter-based, splittable random streams.

Every random draw in the package goes through :func:`stream`, which keys a
Philox generator on ``(seed, *path)``.  Streams with different paths are
statistically independent, and a stream never depends on how many numbers
were drawn from any other stream, so replications can run in any order or
in parallel and still reproduce bit-for-bit.
"""

from __future__ import annotations

import zlib

import numpy as np


def _as_word(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("stream path components must be non-negative")
        return int(part)
    # strings get a stable 32-bit tag; hash() is salted per process
    return zlib.crc32(str(part).encode("utf-8"))


def stream(seed: int, *path) -> np.random.Generator:
    """Return an independent generator for the sub-stream ``path`` of ``seed``."""
    words = [_as_word(seed)] + [_as_word(p) for p in path]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


def substream_seed(seed: int, *path) -> int:
    """Derive a 63-bit integer seed for handing to another seeded routine."""
    words = [_as_word(seed)] + [_as_word(p) for p in path]
    hi, lo = np.random.SeedSequence(words).generate_state(2, dtype=np.uint32)
    return (int(hi) << 31) ^ int(lo)
