"""Exact-length discrete Fourier transforms.

Mixed-radix Cooley-Tukey over the prime factorisation of ``n``; prime
factors above ``_DIRECT_MAX`` go through Bluestein's chirp-z algorithm
on a power-of-two grid. Every routine transforms along the last axis and
vectorises over any leading axes, so a batch of STFT frames is one call.

No zero padding is ever applied to the signal itself: ``rfft`` of 48000
samples returns exactly 24001 bins at spacing ``sr / 48000``.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

__all__ = ["fft", "ifft", "rfft", "irfft", "factorize"]

# Prime factors up to this size are handled by a dense DFT matrix.
_DIRECT_MAX = 64


def factorize(n: int) -> list[int]:
    """Prime factors of ``n`` in ascending order (with multiplicity)."""
    if n < 1:
        raise ValueError(f"transform length must be positive, got {n}")
    out = []
    p = 2
    while p * p <= n:
        while n % p == 0:
            out.append(p)
            n //= p
        p += 1
    if n > 1:
        out.append(n)
    return out


def _unit_roots(n: int, k: np.ndarray) -> np.ndarray:
    # exp(-2j*pi*k/n) with k reduced mod n first, which keeps the phase exact
    # for large products r*k.
    return np.exp(-2j * np.pi * (np.mod(k, n) / n))


@lru_cache(maxsize=None)
def _dft_matrix(n: int) -> np.ndarray:
    k = np.arange(n)
    m = _unit_roots(n, np.outer(k, k))
    m.setflags(write=False)
    return m


@lru_cache(maxsize=None)
def _twiddles(n: int, p: int) -> np.ndarray:
    m = n // p
    t = _unit_roots(n, np.outer(np.arange(p), np.arange(m)))
    t.setflags(write=False)
    return t


@lru_cache(maxsize=None)
def _bluestein_plan(n: int) -> tuple[int, np.ndarray, np.ndarray]:
    size = 1 << (2 * n - 1).bit_length()
    k = np.arange(n, dtype=np.int64)
    # k^2 mod 2n keeps the chirp argument small, so no precision is lost for large k.
    chirp = np.exp(-1j * np.pi * (np.mod(k * k, 2 * n) / n))
    kernel = np.zeros(size, dtype=complex)
    kernel[:n] = np.conj(chirp)
    kernel[size - n + 1:] = np.conj(chirp[1:])[::-1]
    kernel_f = _fft(kernel)
    chirp.setflags(write=False)
    kernel_f.setflags(write=False)
    return size, chirp, kernel_f


def _bluestein(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    size, chirp, kernel_f = _bluestein_plan(n)
    a = np.zeros(x.shape[:-1] + (size,), dtype=complex)
    a[..., :n] = x * chirp
    conv = _ifft(_fft(a) * kernel_f)
    return conv[..., :n] * chirp


def _fft(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    if n == 1:
        return x.astype(complex, copy=True)
    p = factorize(n)[0]
    if p == n:
        if n <= _DIRECT_MAX:
            return x @ _dft_matrix(n).T
        return _bluestein(x)
    if n <= 16:
        return x @ _dft_matrix(n).T
    m = n // p
    lead = x.shape[:-1]
    # Decimation in time: sub-sequence r holds x[r], x[r+p], x[r+2p], ...
    sub = x.reshape(lead + (m, p)).swapaxes(-1, -2)
    y = _fft(sub) * _twiddles(n, p)
    # X[k2*m + k1] = sum_r W_p^(r*k2) * y[r, k1]
    return (_dft_matrix(p) @ y).reshape(lead + (n,))


def _ifft(x: np.ndarray) -> np.ndarray:
    return np.conj(_fft(np.conj(x))) / x.shape[-1]


def fft(x) -> np.ndarray:
    """Complex forward DFT along the last axis, ``X[k] = sum x[t] e^{-2 pi i k t / n}``."""
    return _fft(np.asarray(x, dtype=complex))


def ifft(x) -> np.ndarray:
    """Inverse of :func:`fft` including the ``1/n`` factor."""
    return _ifft(np.asarray(x, dtype=complex))


@lru_cache(maxsize=None)
def _half_twiddles(n: int) -> np.ndarray:
    t = _unit_roots(n, np.arange(n // 2 + 1))
    t.setflags(write=False)
    return t


def rfft(x) -> np.ndarray:
    """One-sided DFT of real input: ``n // 2 + 1`` bins.

    Even lengths pack pairs of samples into one complex sequence of length
    ``n/2`` and untangle the result, halving the work.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if n % 2 or n < 4:
        return _fft(x.astype(complex))[..., : n // 2 + 1]
    half = n // 2
    z = _fft(x[..., 0::2] + 1j * x[..., 1::2])
    idx = np.arange(half + 1)
    zk = z[..., idx % half]
    zc = np.conj(z[..., (half - idx) % half])
    even = 0.5 * (zk + zc)
    odd = -0.5j * (zk - zc)
    return even + _half_twiddles(n) * odd


def irfft(spec, n: int) -> np.ndarray:
    """Real inverse of :func:`rfft` for a signal of length ``n``.

    The imaginary parts of the DC and (even ``n``) Nyquist bins are
    discarded, which is what Hermitian symmetry demands of a real signal.
    """
    spec = np.asarray(spec, dtype=complex)
    if spec.shape[-1] != n // 2 + 1:
        raise ValueError(f"expected {n // 2 + 1} bins for n={n}, got {spec.shape[-1]}")
    spec = spec.copy()
    spec[..., 0] = spec[..., 0].real
    if n % 2 == 0:
        spec[..., -1] = spec[..., -1].real
    if n % 2 or n < 4:
        full = np.empty(spec.shape[:-1] + (n,), dtype=complex)
        full[..., : n // 2 + 1] = spec
        tail = n - (n // 2 + 1)
        if tail:
            full[..., n // 2 + 1:] = np.conj(spec[..., 1: tail + 1][..., ::-1])
        return _ifft(full).real
    half = n // 2
    k = np.arange(half)
    xk = spec[..., k]
    xc = np.conj(spec[..., half - k])
    even = 0.5 * (xk + xc)
    odd = 0.5 * (xk - xc) * np.conj(_half_twiddles(n)[:half])
    z = _ifft(even + 1j * odd)
    out = np.empty(spec.shape[:-1] + (n,), dtype=np.float64)
    out[..., 0::2] = z.real
    out[..., 1::2] = z.imag
    return out
