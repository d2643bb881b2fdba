"""Named, seedable random streams.

Each component draws from its own stream (``generator(seed, "init")``,
``generator(seed, "data")`` ...), so adding draws in one place never shifts
the numbers another component sees.
"""

import random
import zlib

import numpy as np


def _key(stream: str) -> int:
    return zlib.crc32(stream.encode("utf-8"))


def generator(seed: int, stream: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(_key(stream),))))


def py_random(seed: int, stream: str) -> random.Random:
    """Stdlib generator for exact big-integer draws (``randrange`` on counts)."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(_key(stream),))
    return random.Random(int(ss.generate_state(2, dtype=np.uint64)[0]))
