"""Deterministic random streams derived from one run seed."""

import numpy as np

from .shared_config import STREAM_IDS


def derive_rng(seed: int, stream: str, *extra: int) -> np.random.Generator:
    """Return the generator for a named stream of `seed`.

    The same (seed, stream, extra) always yields the same sequence, and
    distinct streams never share state.
    """
    if stream not in STREAM_IDS:
        raise KeyError(f"Unknown random stream: {stream}")
    entropy = [int(seed), STREAM_IDS[stream], *(int(e) for e in extra)]
    return np.random.default_rng(np.random.SeedSequence(entropy))
