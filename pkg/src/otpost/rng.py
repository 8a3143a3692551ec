"""Seedable, splittable counter-based random streams.

All stochastic code in the package draws from Philox streams keyed by a
64-bit seed plus an integer path (e.g. ``stream(seed, iteration, index)``),
so batch-parallel work is reproducible regardless of evaluation order.
"""

from __future__ import annotations

import numpy as np

__all__ = ["stream"]

_PATH_MIX = (0x9E3779B97F4A7C15, 0xBF58476D1CE4E5B9, 0x94D049BB133111EB)


def stream(seed: int, *path: int) -> np.random.Generator:
    """Return a fresh Philox generator for (seed, path).

    Distinct paths give statistically independent streams; identical
    arguments always give the identical stream.
    """
    key = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    for i, part in enumerate(path):
        mix = _PATH_MIX[i % len(_PATH_MIX)]
        key = np.uint64((int(key) ^ ((part + 1) * mix)) & 0xFFFFFFFFFFFFFFFF)
    return np.random.Generator(np.random.Philox(key=int(key)))
