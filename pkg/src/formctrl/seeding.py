"""Sub-seed derivation from one master seed (splitmix64 mixing)."""
from __future__ import annotations

import zlib

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _label_int(label) -> int:
    if isinstance(label, str):
        return zlib.crc32(label.encode())
    return int(label) & _MASK


def derive_seed(master: int, *labels) -> int:
    """Deterministic 63-bit seed for the stream named by ``labels``."""
    state = splitmix64(int(master) & _MASK)
    for label in labels:
        state = splitmix64(state ^ splitmix64(_label_int(label)))
    return state >> 1
