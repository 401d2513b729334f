import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from annealtails.rng import MASK64, Stream, combine, mix64, seed_state, stream_key


def py_mix64(z):
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & MASK64
    return z ^ (z >> 31)


def py_xoshiro(key, n):
    """Reference xoshiro256** seeded by SplitMix64, in plain Python integers."""
    x, s = key, []
    for _ in range(4):
        x = (x + 0x9E3779B97F4A7C15) & MASK64
        s.append(py_mix64(x))

    def rotl(v, k):
        return ((v << k) | (v >> (64 - k))) & MASK64

    out = []
    for _ in range(n):
        out.append(rotl(s[1] * 5 & MASK64, 7) * 9 & MASK64)
        t = s[1] << 17 & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = rotl(s[3], 45)
    return out


@given(st.integers(0, MASK64))
def test_mix64_matches_reference(z):
    assert int(mix64(np.uint64(z))) == py_mix64(z)


@settings(max_examples=30)
@given(st.integers(0, MASK64))
def test_stream_matches_reference(key):
    assert Stream(key).u64(20).tolist() == py_xoshiro(key, 20)


def test_seed_state_is_splitmix_expansion():
    assert seed_state(np.uint64(0)).tolist() == [
        py_mix64((i + 1) * 0x9E3779B97F4A7C15 & MASK64) for i in range(4)
    ]


def test_uniform_range_and_mean():
    u = Stream(7).uniform(100_000)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 4 * np.sqrt(1 / 12 / u.size)


def test_stream_key_is_deterministic_and_separates_streams():
    assert stream_key(1, "tts", 3, 4) == stream_key(1, "tts", 3, 4)
    keys = {stream_key(m, t, i) for m in (0, 1) for t in ("a", "b") for i in range(50)}
    assert len(keys) == 200


def test_combine_chains_indices():
    k = stream_key(9, "x", 5)
    assert stream_key(9, "x", 5, 2) == int(combine(np.uint64(k), np.uint64(2)))
