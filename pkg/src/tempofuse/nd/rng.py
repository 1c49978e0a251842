"""Deterministic random stream derivation.

Every stochastic choice in the package draws from a ``numpy`` PCG64
generator derived from ``(seed, *path)`` via ``SeedSequence``.  Streams for
distinct paths are statistically independent, and rebuilding a stream from
the same path always reproduces the same draws.  Training uses one fresh
stream per (purpose, step), which is what makes checkpoint resume replay
the uninterrupted run exactly: no generator state needs to survive the
restart, only the step counter.
"""

from __future__ import annotations

import numpy as np

__all__ = ["stream"]


def stream(seed: int, *path: int) -> np.random.Generator:
    """Generator for the stream addressed by ``(seed, *path)``.

    Path entries must be nonnegative integers (SeedSequence rejects
    negatives); callers encode purposes as small fixed enums.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((int(seed), *map(int, path)))))
