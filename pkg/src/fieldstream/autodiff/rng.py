"""Derived random streams.

One root seed, many independent streams: each call site derives its own
counter-based generator from the seed plus a tag path, so adding or reordering
stochastic consumers never perturbs the draws of another site. Philox is
counter-based, making the streams cheap to split and fully reproducible.
"""

import zlib

import numpy as np


def stream(seed, *tags):
    """Generator for the stream identified by (seed, *tags)."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for tag in tags:
        entropy.append(zlib.crc32(repr(tag).encode("utf-8")))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
