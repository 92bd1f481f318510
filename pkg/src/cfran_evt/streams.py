"""Deterministic random-stream derivation.

One master seed per experiment; every consumer (topology, shadowing,
arrivals, Monte Carlo oracle) draws from its own child stream so that
policies compared under the same seed see identical randomness except
for their own decisions.
"""

import numpy as np

STREAM_POSITIONS = 0
STREAM_SHADOWING = 1
STREAM_ARRIVALS = 2
STREAM_ORACLE = 3


def substream(seed: int, key: int) -> np.random.Generator:
    """Child generator `key` of master `seed`; stable across runs."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(key,)))
