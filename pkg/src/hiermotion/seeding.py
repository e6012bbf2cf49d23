"""Named random streams derived from one master seed."""

import zlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for ``name``; same (seed, name) gives the same stream."""
    if seed < 0 or seed >= 2 ** 64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))
