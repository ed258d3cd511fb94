"""Seeded random streams.

All randomness goes through numpy's Philox (a counter-based generator whose
output is fixed across platforms), so seeded runs reproduce bit for bit.
"""

import numpy as np


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def split(seed, count: int) -> list[np.random.Generator]:
    """Independent child streams for workers or stacks."""
    children = np.random.SeedSequence(seed).spawn(count)
    return [np.random.Generator(np.random.Philox(c)) for c in children]


def child_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**63 - 1))
