"""Named random streams derived from one integer seed.

Every stochastic step asks for ``stream(seed, tag, *index)``; the tag is
hashed with CRC32 so streams are stable across runs and Python versions.
"""

import zlib

import numpy as np


def stream(seed: int, tag: str, *index: int) -> np.random.Generator:
    key = (zlib.crc32(tag.encode("utf-8")),) + tuple(int(i) for i in index)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))
