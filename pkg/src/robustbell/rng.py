"""Deterministic random-number substreams.

Every source of randomness in the package is derived from a single 64-bit
master seed.  A substream is identified by a short text label plus an integer
index (path number, macro replication, design step, ...).  The label is hashed
with CRC-32 so the spawn key is stable across runs and platforms:

    SeedSequence([master, crc32(label), index]) -> PCG64

Independent labels or indices give statistically independent generators, and
the same (master, label, index) triple always reproduces the same stream.
"""

from __future__ import annotations

import zlib

import numpy as np


def substream(master: int, label: str, index: int = 0) -> np.random.Generator:
    """Return the PCG64 generator for (master seed, label, index)."""
    if not 0 <= int(master) < 2**64:
        raise ValueError(f"master seed must be a 64-bit unsigned integer, got {master}")
    key = [int(master), zlib.crc32(label.encode("utf-8")), int(index)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))
