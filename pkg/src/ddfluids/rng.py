"""Deterministic random streams.

All randomness derives from one 64-bit seed.  Independent streams are keyed
by small integer tuples and drawn from a counter-based Philox generator, so a
stream depends only on ``(seed, key)`` and not on the order in which other
streams were consumed.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_int(k) -> int:
    if isinstance(k, (int, np.integer)):
        return int(k) & 0xFFFFFFFF
    return zlib.crc32(str(k).encode())


def stream(seed: int, *key) -> np.random.Generator:
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_key_int(k) for k in key]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
