"""Per-frame seed derivation.

Child seeds come from numpy's SeedSequence hashing of (master seed, key
path), so a frame's seed depends only on where it sits in the experiment and
never on execution order.  String keys are folded to integers with CRC-32.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key(k) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode())
    if isinstance(k, float):
        return zlib.crc32(repr(k).encode())
    return int(k)


def derive_seed(master: int, *keys) -> int:
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=tuple(_key(k) for k in keys))
    hi, lo = ss.generate_state(2, dtype=np.uint32)
    return (int(hi) << 31) ^ int(lo)
