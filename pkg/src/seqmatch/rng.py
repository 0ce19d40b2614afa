"""Seeded random streams.

Every random draw in the package comes from one root seed split into named
substreams (``"episode"``, ``"init"``, ``"synth-data"``, ...). A substream is
a numpy ``Generator`` over the SFC64 bit generator (a 64-bit add/shift/rotate
chaotic generator) seeded with ``SeedSequence([root_seed, crc32(name)])``,
so streams are independent of each other and of call order.
"""

import zlib

import numpy as np


def substream(seed, name):
    """Return the generator for substream ``name`` of root ``seed``."""
    key = zlib.crc32(name.encode("utf-8"))
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, key])
    return np.random.Generator(np.random.SFC64(ss))


def truncated_normal(rng, shape, std, bound=2.0):
    """Normal draws with |z| <= bound standard deviations (resampled)."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return out * std
