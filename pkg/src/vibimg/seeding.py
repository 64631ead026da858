"""Deterministic seed derivation.

Every stochastic component in the package draws from numpy's PCG64 generator.
Sub-streams (per class, per run, per purpose) are derived from a master seed
with ``derive_rng(master, *key)``, which feeds the key into
``numpy.random.SeedSequence(master, spawn_key=key)``.  Identical
(master, key) pairs always yield bit-identical streams.
"""

from __future__ import annotations

import numpy as np


def derive_rng(master_seed: int, *key: int) -> np.random.Generator:
    """Return a PCG64 generator for the sub-stream identified by ``key``.

    Args:
        master_seed: Non-negative master seed.
        key: Integers naming the sub-stream, e.g. a class index or run index.
    """
    if master_seed < 0:
        raise ValueError(f"seed must be non-negative, got {master_seed}")
    seq = np.random.SeedSequence(master_seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(seq))
