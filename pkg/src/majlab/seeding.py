"""Per-trial random streams derived from one master seed.

``seed_value(master, cell, trial)`` chains SplitMix64 finalizers:
``mix(mix(mix(master) + cell) + trial)``. Every stage is a bijection on
64-bit integers, so for a fixed master and cell, distinct trial indices
always give distinct seeds. This mapping is part of the output contract;
changing it changes every recorded result.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1


def mix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def seed_value(master: int, cell_id: int, trial_index: int) -> int:
    h = mix64(master & MASK64)
    h = mix64((h + cell_id) & MASK64)
    return mix64((h + trial_index) & MASK64)


def seed_for(master: int, cell_id: int, trial_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_value(master, cell_id, trial_index)))
