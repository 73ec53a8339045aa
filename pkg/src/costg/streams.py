"""Deterministic random-stream derivation.

Every source of randomness in the package is a substream addressed by a
root seed plus a path of labels, e.g. ``substream(seed, "boot", b)``.
Substreams are derived with ``numpy.random.SeedSequence`` spawn keys on a
counter-based Philox generator, so results never depend on how work is
scheduled across workers: the same (seed, path) always yields the same
stream, and distinct paths yield statistically independent streams.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["substream", "derive_seed"]


def _encode(part) -> int:
    if isinstance(part, str):
        digest = hashlib.blake2s(part.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")
    value = int(part)
    if value < 0:
        raise ValueError("stream path parts must be non-negative")
    return value


def _sequence(seed: int, path) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=tuple(_encode(p) for p in path))


def substream(seed: int, *path) -> np.random.Generator:
    """Return the generator for stream ``(seed, *path)``."""
    return np.random.Generator(np.random.Philox(_sequence(seed, path)))


def derive_seed(seed: int, *path) -> int:
    """Collapse ``(seed, *path)`` into a fresh integer root seed."""
    return int(_sequence(seed, path).generate_state(1, np.uint64)[0])
