"""Reproducible, order-independent random streams.

Replication ``i`` of a run seeded with ``seed`` always draws from the same
Philox counter-based generator, regardless of how many replications run or
in which order they are executed.
"""
import numpy as np


def stream(seed: int, *index: int) -> np.random.Generator:
    """Independent generator for the sub-stream addressed by ``index``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(i) for i in index))
    return np.random.Generator(np.random.Philox(ss))
