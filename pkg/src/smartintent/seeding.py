"""Deterministic seed derivation so every random stream is replayable."""

from __future__ import annotations

import numpy as np

# Stream tags keep independently-seeded substreams from colliding.
STREAM_MASK = 1
STREAM_ORDER = 2
STREAM_DROPOUT = 3
STREAM_SAMPLE = 4
STREAM_INIT = 5


def child_seed(root: int, *key: int) -> int:
    """Derive a stable 64-bit child seed from a root seed and an integer key path."""
    seq = np.random.SeedSequence([int(root), *[int(k) for k in key]])
    return int(seq.generate_state(1, np.uint64)[0])


def child_rng(root: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(child_seed(root, *key))
