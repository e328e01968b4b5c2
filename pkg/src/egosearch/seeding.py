"""Deterministic RNG derivation.

Every stochastic component draws from a named child stream of one master
seed, so a single integer reproduces a whole run bit-for-bit.
"""

from __future__ import annotations

import zlib

import numpy as np


def derive_rng(seed: int, *tags: str | int) -> np.random.Generator:
    """Child generator for (seed, tags); same arguments give the same stream."""
    keys = [zlib.crc32(str(t).encode()) for t in tags]
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=keys))


def derive_int(seed: int, *tags: str | int, bits: int = 63) -> int:
    """Derived integer seed, e.g. for torch.manual_seed."""
    return int(derive_rng(seed, *tags).integers(0, 2**bits))
