"""Counter-based random streams.

Every random draw in the package comes from a Philox generator keyed by a
master seed plus a tuple of tags (cell id, variable, purpose).  Two streams
with different tags never share state, so switching one mechanism on or off
leaves every other stream untouched, and results do not depend on the order
in which cells are scheduled.
"""
from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _tag_word(tag) -> int:
    if isinstance(tag, (bool, np.bool_)):
        tag = int(tag)
    if isinstance(tag, (int, np.integer)) and 0 <= int(tag) <= _MASK64:
        return int(tag)
    digest = hashlib.blake2b(repr(tag).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _seed_sequence(seed: int, tags: tuple) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed) & _MASK64, spawn_key=tuple(_tag_word(t) for t in tags))


def stream(seed: int, *tags) -> np.random.Generator:
    """Independent generator for ``(seed, *tags)``."""
    return np.random.Generator(np.random.Philox(_seed_sequence(seed, tags)))


def derive_seed(seed: int, *tags) -> int:
    """64-bit child seed for ``(seed, *tags)``; stable across runs and platforms."""
    lo, hi = _seed_sequence(seed, tags).generate_state(2, dtype=np.uint32)
    return (int(hi) << 32) | int(lo)
