"""Keyed random streams.

Every stochastic operation draws from a generator derived from the user
seed plus a tuple of keys (operation tag, replicate, unit name, iteration).
Work can then be split across threads in any order without changing
results.
"""
import hashlib

import numpy as np


def _key_int(key):
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError("stream keys must be nonnegative")
        return int(key)
    digest = hashlib.sha256(str(key).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream(seed, *keys):
    """Return a ``numpy.random.Generator`` for ``(seed, *keys)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key_int(k) for k in keys))
    return np.random.default_rng(ss)
