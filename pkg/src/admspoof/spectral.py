"""Full-clip spectra for band surgery and mel-spectrogram features."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import fft
from .audio_io import Waveform
from .colormap import MAGMA
from .errors import InvalidInputError

# |imag| allowed on the DC / Nyquist bins, relative to the largest bin magnitude.
_SELF_CONJUGATE_TOL = 1e-9
_AMIN = 1e-10


@dataclass(frozen=True, eq=False)
class Spectrum:
    """One-sided DFT of a real clip: ``n // 2 + 1`` complex bins."""

    bins: np.ndarray
    n: int
    sample_rate: int

    def __post_init__(self):
        bins = np.asarray(self.bins, dtype=np.complex128)
        if bins.shape != (self.n // 2 + 1,):
            raise InvalidInputError(f"spectrum of n={self.n} needs {self.n // 2 + 1} bins, got {bins.shape}")
        object.__setattr__(self, "bins", bins)

    def bin_frequencies(self) -> np.ndarray:
        return np.arange(len(self.bins)) * self.sample_rate / self.n


def dft_forward(w: Waveform) -> Spectrum:
    """Exact-length one-sided DFT of the whole clip."""
    if len(w) < 2:
        raise InvalidInputError("need at least 2 samples for a spectrum")
    return Spectrum(fft.rfft(w.samples), len(w), w.sample_rate)


def dft_inverse(s: Spectrum) -> Waveform:
    """Real waveform whose one-sided DFT is ``s``.

    The self-conjugate bins (DC and, for even ``n``, Nyquist) of a real
    signal are real; a larger imaginary residue there means the spectrum
    was edited without mirroring and is rejected.
    """
    scale = max(1.0, float(np.max(np.abs(s.bins))))
    edges = [s.bins[0]] + ([s.bins[-1]] if s.n % 2 == 0 else [])
    residue = max(abs(b.imag) for b in edges)
    if residue > _SELF_CONJUGATE_TOL * scale:
        raise InvalidInputError(f"spectrum is not Hermitian: imaginary residue {residue:.3g} on a real bin")
    return Waveform(fft.irfft(s.bins, s.n), s.sample_rate)


def freq_to_index(f: float, sample_rate: int, n: int) -> int:
    """Smallest bin ``k`` with ``k * sample_rate / n >= f``."""
    nyquist = sample_rate / 2
    if f < 0 or f > nyquist:
        raise ValueError(f"frequency {f} Hz outside [0, {nyquist}]")
    k = math.ceil(f * n / sample_rate)
    # correct any floating-point rounding against the defining inequality
    while k > 0 and (k - 1) * sample_rate / n >= f:
        k -= 1
    while k * sample_rate / n < f:
        k += 1
    return k


# --------------------------------------------------------------------------- mel


@dataclass(frozen=True)
class MelParams:
    n_fft: int = 2048
    hop: int = 512
    n_mels: int = 128
    sample_rate: int = 16000
    fmin: float = 0.0
    fmax: float | None = None
    floor_db: float = -80.0

    @property
    def top_freq(self) -> float:
        return self.sample_rate / 2 if self.fmax is None else self.fmax

    def n_frames(self, n_samples: int) -> int:
        return 1 + n_samples // self.hop


@dataclass(frozen=True, eq=False)
class MelSpectrogram:
    """``values`` is ``[n_mels, n_frames]`` in dB relative to the clip maximum."""

    values: np.ndarray
    params: MelParams

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=16)
def _filterbank(n_fft: int, n_mels: int, sample_rate: int, fmin: float, fmax: float) -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lower = (freqs[None, :] - edges[:-2, None]) / np.diff(edges)[:-1, None]
    upper = (edges[2:, None] - freqs[None, :]) / np.diff(edges)[1:, None]
    fb = np.maximum(0.0, np.minimum(lower, upper))
    fb.setflags(write=False)
    return fb


def mel_filterbank(params: MelParams = MelParams()) -> np.ndarray:
    """HTK-scale triangular filters, shape ``[n_mels, n_fft // 2 + 1]``, peak 1."""
    return _filterbank(params.n_fft, params.n_mels, params.sample_rate,
                       float(params.fmin), float(params.top_freq))


def mel_center_frequencies(params: MelParams = MelParams()) -> np.ndarray:
    m = np.linspace(hz_to_mel(params.fmin), hz_to_mel(params.top_freq), params.n_mels + 2)
    return mel_to_hz(m[1:-1])


def stft_power(x: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    """Centered, reflect-padded STFT power with a periodic Hann window; ``[bins, frames]``."""
    pad = n_fft // 2
    if len(x) <= pad:
        raise InvalidInputError(f"clip of {len(x)} samples too short for n_fft={n_fft}")
    padded = np.pad(x, pad, mode="reflect")
    frames = np.lib.stride_tricks.sliding_window_view(padded, n_fft)[::hop]
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n_fft) / n_fft)
    spec = fft.rfft(frames * window)
    return (spec.real ** 2 + spec.imag ** 2).T


def power_to_db(power: np.ndarray, floor_db: float = -80.0) -> np.ndarray:
    """dB relative to the maximum, clipped below at ``floor_db``; silence maps to the floor."""
    peak = float(np.max(power))
    if peak <= _AMIN:
        return np.full(power.shape, floor_db)
    db = 10.0 * np.log10(np.maximum(power, _AMIN)) - 10.0 * np.log10(peak)
    return np.maximum(db, floor_db)


def mel_spectrogram(w: Waveform, params: MelParams = MelParams()) -> MelSpectrogram:
    if w.sample_rate != params.sample_rate:
        raise InvalidInputError(f"waveform at {w.sample_rate} Hz, mel params expect {params.sample_rate} Hz")
    power = stft_power(w.samples, params.n_fft, params.hop)
    mel = mel_filterbank(params) @ power
    return MelSpectrogram(power_to_db(mel, params.floor_db), params)


# ------------------------------------------------------------------------ images


def _bilinear(img: np.ndarray, height: int, width: int) -> np.ndarray:
    # align-corners sampling: output corners land exactly on input corners
    h, w = img.shape[:2]
    ys = np.linspace(0.0, h - 1, height) if height > 1 else np.zeros(1)
    xs = np.linspace(0.0, w - 1, width) if width > 1 else np.zeros(1)
    y0 = np.minimum(np.floor(ys).astype(int), max(h - 2, 0))
    x0 = np.minimum(np.floor(xs).astype(int), max(w - 2, 0))
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bottom = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bottom * fy


def render_image(m: MelSpectrogram, size: tuple[int, int] = (299, 299)) -> np.ndarray:
    """Magma-coloured RGB image, ``uint8 [height, width, 3]``, low frequencies at the bottom."""
    width, height = size
    v = np.asarray(m.values, dtype=np.float64)[::-1]
    lo, hi = float(v.min()), float(v.max())
    scaled = np.zeros_like(v) if hi == lo else (v - lo) / (hi - lo)
    rgb = MAGMA[np.rint(scaled * 255).astype(int)].astype(np.float64)
    return np.clip(np.rint(_bilinear(rgb, height, width)), 0, 255).astype(np.uint8)


def save_png(image: np.ndarray, path) -> None:
    from PIL import Image

    Image.fromarray(image, mode="RGB").save(path, format="PNG")


# ------------------------------------------------------------------ MELF files

MELF_MAGIC = b"MELF"
MELF_VERSION = 1
_MELF_HEADER = struct.Struct("<4sIII")


def write_melf(path, matrix) -> None:
    """Store a 2-D matrix as little-endian float32, row-major, behind a 16-byte header."""
    a = np.ascontiguousarray(matrix, dtype="<f4")
    if a.ndim != 2:
        raise InvalidInputError(f"MELF stores 2-D matrices, got shape {a.shape}")
    with open(path, "wb") as fh:
        fh.write(_MELF_HEADER.pack(MELF_MAGIC, MELF_VERSION, a.shape[0], a.shape[1]))
        fh.write(a.tobytes())


def read_melf(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _MELF_HEADER.size:
        raise InvalidInputError(f"{path}: truncated MELF header")
    magic, version, rows, cols = _MELF_HEADER.unpack_from(data)
    if magic != MELF_MAGIC:
        raise InvalidInputError(f"{path}: bad magic {magic!r}")
    if version != MELF_VERSION:
        raise InvalidInputError(f"{path}: unsupported MELF version {version}")
    expected = _MELF_HEADER.size + 4 * rows * cols
    if len(data) != expected:
        raise InvalidInputError(f"{path}: expected {expected} bytes, found {len(data)}")
    return np.frombuffer(data, dtype="<f4", offset=_MELF_HEADER.size).reshape(rows, cols).copy()
