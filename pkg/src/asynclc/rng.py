"""Deterministic RNG substream derivation.

Every stochastic component derives per-unit generators as
SeedSequence(entropy=seed, spawn_key=(index,)), so replicate k's stream is a
pure function of (seed, k) and results do not depend on execution order or
worker count.
"""

from __future__ import annotations

import numpy as np

__all__ = ["substream"]


def substream(seed, index: int) -> np.random.Generator:
    """Generator for unit `index` of the stream identified by `seed`."""
    if isinstance(seed, (tuple, list)):
        entropy = tuple(int(s) for s in seed)
    else:
        entropy = int(seed)
    return np.random.default_rng(np.random.SeedSequence(entropy=entropy, spawn_key=(int(index),)))
