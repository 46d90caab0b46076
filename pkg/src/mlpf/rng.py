"""Keyed random streams.

Every filter in an experiment draws from its own generator, derived from the
master seed and an integer key path (sweep level, replicate, MLPF level,
stream kind). The draw assignment therefore does not depend on scheduling
or on how many worker threads run the task grid.
"""

from __future__ import annotations

import numpy as np

MLPF_STREAM = 0
PF_STREAM = 1
REFERENCE_STREAM = 2
DATA_STREAM = 3


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``key`` under the master ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=tuple(key))))
