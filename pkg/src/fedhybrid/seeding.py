"""Seed derivation. Every random stream is keyed by a tuple of integers."""

from __future__ import annotations

import numpy as np


def derive_seed(*keys: int) -> int:
    """Hash a tuple of non-negative integers into a 64-bit seed."""
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(1, np.uint64)
    return int(state[0])


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, (tuple, list)):
        return np.random.default_rng(np.random.SeedSequence([int(k) for k in seed]))
    return np.random.default_rng(np.random.SeedSequence(int(seed)))
