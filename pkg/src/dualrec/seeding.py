"""One root seed, split per subsystem.

Each subsystem gets a Philox stream keyed by (root seed, subsystem name[, counter]),
so e.g. changing the negative sampler never shifts the initialization.
"""
import zlib

import numpy as np

SUBSYSTEMS = ("init", "split", "subsample", "shuffle", "dropout", "negatives")


def rng_for(root_seed: int, subsystem: str, *counter: int) -> np.random.Generator:
    tag = zlib.crc32(subsystem.encode("utf-8"))
    ss = np.random.SeedSequence([int(root_seed) & 0xFFFFFFFF, tag, *[int(c) for c in counter]])
    return np.random.Generator(np.random.Philox(ss))
