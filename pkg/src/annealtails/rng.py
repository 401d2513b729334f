"""Deterministic random streams.

Every stochastic quantity in the package is drawn from xoshiro256** streams
whose 256-bit state is expanded with SplitMix64 from a single 64-bit key.
Keys are derived by hashing ``(master seed, stage tag, instance id,
repetition index)``, so any work unit can reconstruct its own stream without
coordination and results do not depend on scheduling order.
"""

from __future__ import annotations

import hashlib

import numpy as np
from numba import njit

MASK64 = (1 << 64) - 1

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


@njit(cache=True)
def mix64(z):
    """SplitMix64 finalizer (a bijection on 64-bit words)."""
    z = np.uint64(z)
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def combine(key, value):
    return mix64(np.uint64(key) ^ mix64(np.uint64(value) + _GOLDEN))


@njit(cache=True)
def seed_state(key):
    """Expand a 64-bit key into a xoshiro256** state with SplitMix64."""
    state = np.empty(4, dtype=np.uint64)
    x = np.uint64(key)
    for i in range(4):
        x = x + _GOLDEN
        state[i] = mix64(x)
    return state


@njit(cache=True, inline="always")
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@njit(cache=True, inline="always")
def next_u64(s):
    result = _rotl(s[1] * np.uint64(5), 7) * np.uint64(9)
    t = s[1] << np.uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


@njit(cache=True, inline="always")
def next_double(s):
    """Uniform double in [0, 1) with 53 random bits."""
    return np.float64(next_u64(s) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


def tag_hash(tag: str) -> int:
    return int.from_bytes(hashlib.blake2b(tag.encode(), digest_size=8).digest(), "little")


def stream_key(master: int, tag: str, *indices: int) -> int:
    """Key for the stream identified by ``(master, tag, *indices)``."""
    key = combine(np.uint64(master & MASK64), np.uint64(tag_hash(tag)))
    for idx in indices:
        key = combine(np.uint64(key), np.uint64(idx & MASK64))
    return int(key)


class Stream:
    """Python-side handle on a xoshiro256** stream (used for small draws)."""

    def __init__(self, key: int):
        self.key = int(key) & MASK64
        self.state = seed_state(np.uint64(self.key))

    def u64(self, n: int) -> np.ndarray:
        return _fill_u64(self.state, n)

    def uniform(self, n: int) -> np.ndarray:
        return _fill_double(self.state, n)


@njit(cache=True)
def _fill_u64(state, n):
    out = np.empty(n, dtype=np.uint64)
    for i in range(n):
        out[i] = next_u64(state)
    return out


@njit(cache=True)
def _fill_double(state, n):
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        out[i] = next_double(state)
    return out
