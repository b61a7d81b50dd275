"""Deterministic seed derivation.

All randomness flows from numpy's ``SeedSequence`` hashing of
``(seed, *keys)`` feeding a PCG64 bit generator. Both algorithms are
documented by numpy and stable across platforms, so any derived stream can
be reproduced from the run seed and its key path alone.
"""

from __future__ import annotations

import numpy as np

# Top-level stream keys. Data and plan randomness never share a stream, so
# exact and sketched runs see identical batches.
DATA = 0
PLANS = 1
VALIDATION = 2
INIT = 3
TRIALS = 4


def _sequence(seed: int, keys) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))


def derive(seed: int, *keys: int) -> int:
    """A 64-bit child seed for the key path ``keys`` under ``seed``."""
    return int(_sequence(seed, keys).generate_state(1, dtype=np.uint64)[0])


def rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(_sequence(seed, keys)))
