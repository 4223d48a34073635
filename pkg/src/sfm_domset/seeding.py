"""Deterministic seed derivation for independent, reproducible random streams."""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def sub_seed(seed: int, *keys: int) -> int:
    """Derive a 64-bit child seed from ``seed`` and an index path.

    Built on ``SeedSequence`` spawn keys, so children of distinct index paths
    are statistically independent and can be generated in any order.
    """
    ss = np.random.SeedSequence(int(seed) & _MASK64, spawn_key=tuple(int(k) & _MASK64 for k in keys))
    return int(ss.generate_state(1, np.uint64)[0])


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(sub_seed(seed, *keys) if keys else int(seed) & _MASK64)
