"""Named, index-addressable random sub-streams derived from one seed.

Every random draw in the package goes through :func:`substream`, so that a
record's randomness depends on ``(seed, stream name, record index)`` only and
never on execution order or worker count.
"""

import zlib

import numpy as np


def _key(part):
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part) & 0xFFFFFFFF


def substream(seed, name, *index):
    """Return a Generator for the named sub-stream ``name`` at ``index``."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1),
                                spawn_key=(_key(name),) + tuple(_key(i) for i in index))
    return np.random.default_rng(ss)
