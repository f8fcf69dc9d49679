"""Counter-based random streams.

Every stochastic quantity is drawn from a Philox generator keyed by
``(master seed, *path)``, where the path names the experiment and the
restart / trajectory / epoch index.  Two runs with the same seed therefore
see the same numbers no matter how work is split across processes.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key_part(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode())
    return int(part)


def stream(seed: int, *path) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key_part(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))
