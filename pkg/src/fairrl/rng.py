"""Counter-based random numbers.

Every draw is a pure function of ``(seed, group, episode, individual, step, slot)``
run through a SplitMix64 finaliser, so trajectories do not depend on batch
layout, thread count, or whether the numba or numpy kernels are used.
"""
from __future__ import annotations

import numpy as np

from ._accel import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0

# Slots per step; step 0 is reserved for the initial-state draw.
SLOT_ACTION = 0
SLOT_REWARD = 1
SLOT_NEXT = 2
SLOT_DROPOUT = 3
SLOT_INIT = 4
SLOTS = 8


def _mix_np(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def stream_keys(seed: int, group: int, episodes: np.ndarray, individuals: np.ndarray) -> np.ndarray:
    """Per-individual 64-bit stream keys (vectorised)."""
    episodes = np.asarray(episodes, dtype=np.uint64)
    individuals = np.asarray(individuals, dtype=np.uint64)
    base = _mix_np(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64) ^ _GOLDEN)
    base = _mix_np(base + np.array([group], dtype=np.uint64) * _GOLDEN)
    key = _mix_np(base + episodes * _GOLDEN)
    return _mix_np(key + individuals * _M1)


def uniforms(keys: np.ndarray, step: int, slot: int) -> np.ndarray:
    """Uniform doubles in [0, 1) for each key at counter ``(step, slot)``."""
    ctr = np.array([step * SLOTS + slot + 1], dtype=np.uint64) * _GOLDEN
    z = _mix_np(np.asarray(keys, dtype=np.uint64) + ctr)
    return (z >> _S11).astype(np.float64) * _INV53


@njit
def mix_scalar(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit
def uniform_scalar(key, step, slot):
    ctr = np.uint64(step * 8 + slot + 1) * np.uint64(0x9E3779B97F4A7C15)
    z = mix_scalar(np.uint64(key + ctr))
    return np.float64(z >> np.uint64(11)) * (1.0 / 9007199254740992.0)


def seed_sequence(seed: int, n: int) -> list[int]:
    """Derive ``n`` independent 63-bit seeds from one root seed."""
    keys = stream_keys(seed, 0, np.zeros(n, dtype=np.uint64), np.arange(n, dtype=np.uint64))
    return [int(k >> np.uint64(1)) for k in keys]
