"""Seeding policy.

Every random consumer derives its generator as
``numpy.random.default_rng([stream, seed, *extras])`` (PCG64 seeded
through NumPy's SeedSequence). The fixed stream id keeps consumers
statistically independent even when the user passes the same seed
everywhere; extras split further substreams (one per benchmark size,
per projection matrix, and so on). Reproducing any artifact therefore
needs only the user-facing seed plus the constants below.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "STREAM_SCENE",
    "STREAM_SAMPLE",
    "STREAM_BENCH",
    "STREAM_PARAMS",
    "substream",
]

STREAM_SCENE = 11
STREAM_SAMPLE = 12
STREAM_BENCH = 13
STREAM_PARAMS = 14


def substream(stream: int, seed: int, *extras: int) -> np.random.Generator:
    """Generator for one consumer stream of a user seed."""
    return np.random.default_rng([int(stream), int(seed), *(int(e) for e in extras)])
