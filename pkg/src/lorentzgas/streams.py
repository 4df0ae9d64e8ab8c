"""Replica-local random streams.

The scatterer environment draws from a counter-based hash keyed by
``(seed, cell)`` (see ``_hash``).  Everything else -- initial velocities,
auxiliary clocks, proposals -- comes from independent Philox streams keyed by
``(seed, purpose, *indices)``.  Fixing the environment seed while varying the
other keys is exactly conditioning on the environment.
"""

import zlib

import numpy as np


def purpose_code(purpose):
    return zlib.crc32(purpose.encode("ascii"))


def stream(seed, purpose, *indices):
    """Independent generator for ``(seed, purpose, *indices)``."""
    key = [int(seed), purpose_code(purpose)] + [int(i) for i in indices]
    if any(k < 0 for k in key):
        raise ValueError("stream keys must be non-negative integers")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def derive_seed(seed, purpose, *indices):
    """A 63-bit integer seed derived from a key tuple (e.g. per-replica environments)."""
    key = [int(seed), purpose_code(purpose)] + [int(i) for i in indices]
    return int(np.random.SeedSequence(key).generate_state(1, np.uint64)[0] >> np.uint64(1))
