import numpy as np
from hypothesis import given, strategies as st

from regionedit.rng import Rng

seeds = st.integers(min_value=0, max_value=2**64 - 1)


def test_same_seed_same_stream():
    a, b = Rng(42), Rng(42)
    assert np.array_equal(a.uniforms(10_000), b.uniforms(10_000))


def test_gaussian_moments():
    g = Rng(7).gaussians(100_000)
    assert abs(g.mean()) <= 0.02
    assert abs(g.var() - 1.0) <= 0.03


def test_streams_differ():
    assert not np.array_equal(Rng(1, 0).uniforms(100), Rng(1, 1).uniforms(100))


def test_scalar_and_vector_draws_agree():
    a, b = Rng(3), Rng(3)
    vec = a.uniforms(5)
    assert np.array_equal(vec, [b.next_uniform() for _ in range(5)])
    a, b = Rng(3), Rng(3)
    assert a.gaussians(4).tolist() == [b.next_gaussian() for _ in range(4)]


def test_fill_is_row_major():
    a, b = Rng(9), Rng(9)
    assert np.array_equal(a.fill_gaussian((2, 3, 4)).ravel(), b.gaussians(24))


@given(seeds, st.integers(0, 1000), st.integers(1, 300))
def test_uniforms_in_unit_interval(seed, stream, n):
    u = Rng(seed, stream).uniforms(n)
    assert np.all(u >= 0.0) and np.all(u < 1.0)


@given(seeds, st.integers(1, 50), st.integers(1, 50))
def test_draws_concatenate(seed, n, m):
    a, b = Rng(seed), Rng(seed)
    assert np.array_equal(a.gaussians(n + m), np.concatenate([b.gaussians(n), b.gaussians(m)]))


M64 = 2**64 - 1


def _mix_py(z):
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
    return z ^ (z >> 31)


@given(seeds, st.integers(0, 2**32))
def test_matches_scalar_splitmix(seed, stream):
    """The vectorised generator against a plain-integer splitmix64 transcription."""
    gamma = 0x9E3779B97F4A7C15
    state = _mix_py(seed ^ _mix_py(((stream + 1) * gamma) & M64))
    expect = []
    for _ in range(8):
        state = (state + gamma) & M64
        expect.append((_mix_py(state) >> 11) * 2.0**-53)
    assert Rng(seed, stream).uniforms(8).tolist() == expect
