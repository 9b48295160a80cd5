"""Deterministic seed derivation: one master u64 seed, splitmix-style mixing.

Subsystems never share a raw seed; they derive their own with a fixed label so
adding a consumer cannot perturb the streams of existing ones.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(state: int) -> int:
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


def derive_seed(master: int, label: str) -> int:
    """Mix a label into the master seed, one splitmix round per byte."""
    state = master & _MASK
    for byte in label.encode("utf-8"):
        state = splitmix64(state ^ byte)
    return splitmix64(state)


def rng_for(master: int, label: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, label))
