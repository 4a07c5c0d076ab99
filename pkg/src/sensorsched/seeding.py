"""Deterministic stream derivation.

Every random draw in the package flows from a master seed through
counter-based sub-streams: ``substream(root, *key)`` appends the key to
the SeedSequence spawn key, so (master seed, stream id, replicate index)
always maps to the same generator state.  Re-running any pipeline with
the same master seed is bit-identical.
"""

from __future__ import annotations

import numpy as np

# stream ids appended to spawn keys
STREAM_SIGNAL = 0
STREAM_OBS = 1
STREAM_EVAL = 2
STREAM_GRAD = 3
STREAM_REPORT = 4


def substream(root, *key: int) -> np.random.SeedSequence:
    """Child SeedSequence of an integer seed or another SeedSequence."""
    if isinstance(root, np.random.SeedSequence):
        entropy = root.entropy
        base = tuple(root.spawn_key)
    else:
        entropy = int(root)
        base = ()
    return np.random.SeedSequence(entropy=entropy, spawn_key=base + tuple(int(k) for k in key))


def replicate_seeds(root, replicate: int):
    """(signal, observation) seed pair for one Monte-Carlo replicate."""
    return (
        substream(root, STREAM_SIGNAL, replicate),
        substream(root, STREAM_OBS, replicate),
    )
