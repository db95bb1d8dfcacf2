"""Seeded, splittable random streams.

Every random draw in the package goes through :func:`stream`, which keys a
PCG64 generator on ``(seed, *purpose)``.  Purposes are short strings such as
``("friedman", "init")`` so that data generation, initialization and
mini-batch shuffling never share a stream.
"""

import zlib

import numpy as np


def _purpose_key(purpose):
    key = []
    for p in purpose:
        if isinstance(p, (int, np.integer)):
            key.append(int(p) & 0xFFFFFFFF)
        else:
            key.append(zlib.crc32(str(p).encode("utf-8")))
    return tuple(key)


def stream(seed, *purpose):
    """Return an independent ``numpy.random.Generator`` for ``(seed, purpose)``."""
    seq = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF,
                                 spawn_key=_purpose_key(purpose))
    return np.random.Generator(np.random.PCG64(seq))
