"""Waveform container, WAV I/O, resampling and clip standardisation."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, WavFormatError, WavParseError

log = logging.getLogger(__name__)

DEFAULT_SECONDS = 3.0
DEFAULT_RATE = 16000

# Windowed-sinc kernel: zero crossings per side, in output-rate samples.
SINC_HALF_WIDTH = 32
# Output samples computed per block while resampling; bounds peak memory.
_BLOCK = 8192

_FORMAT_PCM = 0x0001
_FORMAT_FLOAT = 0x0003
_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True, eq=False)
class Waveform:
    """Mono audio: float64 samples nominally in [-1, 1] plus a sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        s = np.ascontiguousarray(self.samples, dtype=np.float64)
        if s.ndim != 1:
            raise InvalidInputError(f"waveform must be 1-D, got shape {s.shape}")
        if int(self.sample_rate) <= 0:
            raise InvalidInputError(f"sample rate must be positive, got {self.sample_rate}")
        if not np.isfinite(s).all():
            raise InvalidInputError("waveform contains NaN or Inf samples")
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


def _read_chunks(data: bytes):
    if len(data) < 12:
        raise WavParseError("file too short for a RIFF header")
    riff, _, wave = struct.unpack("<4sI4s", data[:12])
    if riff != b"RIFF" or wave != b"WAVE":
        raise WavParseError("not a RIFF/WAVE file")
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack("<4sI", data[pos: pos + 8])
        body = data[pos + 8: pos + 8 + size]
        yield cid, size, body
        pos += 8 + size + (size & 1)


def load_wav(path) -> Waveform:
    """Read a PCM-16 or float-32 WAV file, 1 or 2 channels, as mono.

    Stereo is averaged; 16-bit integers are scaled by 1/32768. The file's
    own sample rate is kept.
    """
    path = Path(path)
    data = path.read_bytes()
    fmt = None
    pcm = None
    for cid, size, body in _read_chunks(data):
        if cid == b"fmt ":
            if len(body) < 16:
                raise WavParseError(f"{path}: truncated fmt chunk")
            tag, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", body[:16])
            if tag == _FORMAT_EXTENSIBLE:
                if len(body) < 26:
                    raise WavParseError(f"{path}: truncated extensible fmt chunk")
                tag = struct.unpack("<H", body[24:26])[0]
            fmt = (tag, channels, rate, block_align, bits)
        elif cid == b"data":
            if len(body) < size:
                raise WavParseError(f"{path}: data chunk declares {size} bytes, found {len(body)}")
            pcm = body
            break
    if fmt is None:
        raise WavParseError(f"{path}: no fmt chunk")
    if pcm is None:
        raise WavParseError(f"{path}: no data chunk")

    tag, channels, rate, block_align, bits = fmt
    if tag == _FORMAT_PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), 1.0 / 32768.0
    elif tag == _FORMAT_FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), 1.0
    else:
        raise WavFormatError(f"{path}: unsupported encoding (format tag {tag:#06x}, {bits} bits)")
    if channels not in (1, 2):
        raise WavFormatError(f"{path}: {channels} channels not supported")
    if block_align != channels * dtype.itemsize:
        raise WavParseError(f"{path}: inconsistent block alignment {block_align}")
    if len(pcm) % block_align:
        raise WavParseError(f"{path}: data ends mid-frame")

    frames = np.frombuffer(pcm, dtype=dtype).astype(np.float64) * scale
    frames = frames.reshape(-1, channels)
    mono = frames[:, 0] if channels == 1 else frames.mean(axis=1)
    return Waveform(mono, rate)


def write_wav(w: Waveform, path) -> None:
    """Write ``w`` as 16-bit PCM mono, clamping anything outside [-1, 1]."""
    s = w.samples
    peak = float(np.max(np.abs(s))) if len(s) else 0.0
    if peak > 1.0:
        log.warning("clamping %d samples outside [-1, 1] (peak %.4f) while writing %s",
                    int(np.count_nonzero(np.abs(s) > 1.0)), peak, path)
    pcm = np.clip(np.round(s * 32768.0), -32768, 32767).astype("<i2")
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + pcm.nbytes, b"WAVE",
        b"fmt ", 16, _FORMAT_PCM, 1, w.sample_rate, w.sample_rate * 2, 2, 16,
        b"data", pcm.nbytes,
    )
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(pcm.tobytes())
    except OSError as exc:
        raise OSError(f"could not write {path}: {exc}") from exc


def sinc_kernel(offset, cutoff: float, half_width: float) -> np.ndarray:
    """Hann-windowed sinc evaluated at ``offset`` (in source samples).

    ``cutoff`` is the passband edge relative to the source Nyquist (1.0 for
    upsampling). Taps farther than ``half_width`` source samples are zero.
    """
    d = np.asarray(offset, dtype=np.float64)
    window = np.where(np.abs(d) < half_width, 0.5 * (1.0 + np.cos(np.pi * d / half_width)), 0.0)
    return cutoff * np.sinc(cutoff * d) * window


def resample(w: Waveform, target_rate: int, n_out: int | None = None) -> Waveform:
    """Band-limited sinc resampling to ``target_rate``.

    Output sample ``n`` sits at source position ``n * src / target``. Taps
    that fall outside the clip are dropped and the remaining weights are
    renormalised to unit sum, so constant signals stay constant up to the
    edges. ``n_out`` limits how many output samples are produced.
    """
    src = w.sample_rate
    target = int(target_rate)
    if target <= 0:
        raise InvalidInputError(f"target rate must be positive, got {target_rate}")
    n_in = len(w)
    full = (n_in * target + src // 2) // src
    n_out = full if n_out is None else min(int(n_out), full)
    if target == src:
        return Waveform(w.samples[:n_out].copy(), src)

    cutoff = min(1.0, target / src)
    half_width = SINC_HALF_WIDTH / cutoff
    reach = int(np.ceil(half_width))
    taps = np.arange(-reach + 1, reach + 1)
    x = w.samples
    out = np.empty(n_out)
    for lo in range(0, n_out, _BLOCK):
        n = np.arange(lo, min(lo + _BLOCK, n_out), dtype=np.int64)
        base = (n * src) // target
        frac = ((n * src) % target) / target
        idx = base[:, None] + taps[None, :]
        weights = sinc_kernel(frac[:, None] - taps[None, :], cutoff, half_width)
        valid = (idx >= 0) & (idx < n_in)
        weights = np.where(valid, weights, 0.0)
        vals = x[np.clip(idx, 0, n_in - 1)]
        out[lo: lo + len(n)] = (weights * vals).sum(axis=1) / weights.sum(axis=1)
    return Waveform(out, target)


def standardize(w: Waveform, target_seconds: float = DEFAULT_SECONDS,
                target_rate: int = DEFAULT_RATE) -> Waveform:
    """Resample to ``target_rate`` then truncate or zero-pad the tail to a fixed length."""
    if target_seconds <= 0:
        raise InvalidInputError(f"target_seconds must be positive, got {target_seconds}")
    if len(w) == 0:
        raise InvalidInputError("cannot standardize an empty waveform")
    length = int(round(target_seconds * target_rate))
    r = resample(w, target_rate, n_out=length)
    if len(r) == length:
        return r
    padded = np.zeros(length)
    padded[: len(r)] = r.samples
    return Waveform(padded, target_rate)


def peak_normalize(w: Waveform) -> Waveform:
    """Scale so that max |sample| == 1; silence is returned unchanged."""
    peak = np.max(np.abs(w.samples)) if len(w) else 0.0
    if peak == 0.0:
        return w
    return Waveform(w.samples / peak, w.sample_rate)
