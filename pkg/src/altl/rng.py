"""Seeded random streams.

Every random decision in the library draws from a PCG64 generator keyed by
(seed, purpose, index). Purposes get fixed integer ids so the same seed can
drive independent streams for splitting, synthesis, weight init, dropout,
minibatch shuffling and strategy randomness without interference, and so a
whole experiment is reproducible bit-for-bit across platforms.
"""

from __future__ import annotations

import numpy as np

_PURPOSES = {
    "split": 0,
    "synth": 1,
    "init": 2,
    "dropout": 3,
    "strategy": 4,
    "train": 5,
    "bootstrap": 6,
}


def stream(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    """Generator for a named sub-stream of `seed`."""
    if purpose not in _PURPOSES:
        raise ValueError(f"unknown stream purpose {purpose!r}")
    ss = np.random.SeedSequence(int(seed), spawn_key=(_PURPOSES[purpose], int(index)))
    return np.random.Generator(np.random.PCG64(ss))


def derive(seed: int, purpose: str, index: int = 0) -> int:
    """Stable 63-bit child seed, for plumbing into configs."""
    if purpose not in _PURPOSES:
        raise ValueError(f"unknown stream purpose {purpose!r}")
    ss = np.random.SeedSequence(int(seed), spawn_key=(_PURPOSES[purpose], int(index)))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)
