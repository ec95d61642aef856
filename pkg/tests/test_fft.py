import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from admspoof import fft


def direct_dft(x):
    # O(n^2) oracle straight from the definition
    n = len(x)
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) @ x


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6, 7, 8, 12, 15, 16, 30, 49, 60, 67, 97, 100, 127, 128, 131, 210, 254])
def test_fft_matches_direct_sum(n, rng):
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    assert rel_err(fft.fft(x), direct_dft(x)) < 1e-12


@pytest.mark.parametrize("n", [2, 3, 8, 9, 50, 67, 134, 254, 255])
def test_rfft_matches_direct_sum(n, rng):
    x = rng.standard_normal(n)
    assert rel_err(fft.rfft(x), direct_dft(x)[: n // 2 + 1]) < 1e-12


@pytest.mark.parametrize("n", [48000, 44100, 48001, 2 * 7919])
def test_large_lengths_agree_with_numpy(n, rng):
    x = rng.standard_normal(n)
    assert rel_err(fft.rfft(x), np.fft.rfft(x)) < 1e-12
    assert rel_err(fft.irfft(np.fft.rfft(x), n), x) < 1e-12


def test_factorize():
    assert fft.factorize(48000) == [2] * 7 + [3] + [5] * 3
    assert fft.factorize(7919) == [7919]
    assert fft.factorize(1) == []


def test_batched_last_axis(rng):
    x = rng.standard_normal((3, 4, 30))
    out = fft.fft(x)
    for i in range(3):
        for j in range(4):
            assert rel_err(out[i, j], direct_dft(x[i, j])) < 1e-12


def test_irfft_zeroes_edge_imaginary_parts():
    spec = np.zeros(5, complex)
    spec[0] = 1 + 3j
    spec[4] = 2 - 1j
    x = fft.irfft(spec, 8)
    expected = (1 + 2 * np.cos(np.pi * np.arange(8))) / 8
    np.testing.assert_allclose(x, expected, atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 300), st.integers(0, 2**32 - 1))
def test_roundtrip_and_parseval_any_length(n, seed):
    x = np.random.default_rng(seed).standard_normal(n)
    X = fft.fft(x)
    assert rel_err(fft.ifft(X).real, x) < 1e-12
    assert abs(np.sum(np.abs(X) ** 2) / n - np.sum(x ** 2)) <= 1e-10 * max(np.sum(x ** 2), 1e-300)
    if n >= 1:
        assert rel_err(fft.irfft(fft.rfft(x), n), x) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 200), st.integers(0, 2**32 - 1))
def test_linearity(n, seed):
    r = np.random.default_rng(seed)
    a, b = r.standard_normal(n), r.standard_normal(n)
    np.testing.assert_allclose(fft.fft(2.5 * a - b), 2.5 * fft.fft(a) - fft.fft(b), atol=1e-9 * n)
