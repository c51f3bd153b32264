"""
Counter-based random streams.

Every stream is a Philox generator keyed by (seed, purpose, *indices), so a
chunk of samples draws the same numbers no matter which worker runs it or in
what order chunks complete.
"""
from typing import List, Tuple

import numpy as np

from heisenberg.config import CHUNK_SIZE


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for (seed, keys...)"""
    ss = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF,
                                spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def chunks(total: int, size: int = CHUNK_SIZE) -> List[Tuple[int, int]]:
    """Split `total` samples into (chunk_index, count) work units"""
    out = []
    index = 0
    remaining = int(total)
    while remaining > 0:
        count = min(size, remaining)
        out.append((index, count))
        remaining -= count
        index += 1
    return out

