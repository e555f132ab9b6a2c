"""Named, seedable random streams.

Every consumer of randomness (init, dropout, sampling, augmentation, ...) gets
its own counter-based Philox stream derived from (seed, name), so adding or
reordering components never changes the numbers another component sees.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_key(seed: int, name: str) -> int:
    digest = hashlib.sha256(f"{seed}/{name}".encode()).digest()
    return int.from_bytes(digest[:16], "little")


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named purpose."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, name)))
