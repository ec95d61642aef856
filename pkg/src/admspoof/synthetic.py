"""Synthetic real/fake corpus for smoke tests and the end-to-end check.

Each clip is spectrally shaped noise plus a few speaker-specific tones. The
two classes differ only in spectral tilt: "real" clips are flat while
"fake" clips roll off by ``FAKE_TILT_DB_PER_OCTAVE`` above ``PIVOT_HZ``.

The steep roll-off leaves the fakes' upper mel rows at the dB floor, so a
band swapped in from a real clip shows up as a bright stripe wherever it
lands. With the opposite assignment the swap only carves a shallow notch
that a partly covered mel filter barely registers.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import fft
from .audio_io import DEFAULT_RATE, DEFAULT_SECONDS, Waveform, peak_normalize, write_wav
from .dataset import Label, Manifest, SampleRecord, write_manifest

PIVOT_HZ = 20.0
REAL_TILT_DB_PER_OCTAVE = 0.0
FAKE_TILT_DB_PER_OCTAVE = -18.0
TONE_LEVEL = 0.1


def speaker_tones(speaker: int, seed: int = 0) -> np.ndarray:
    """Three harmonics of a speaker-specific fundamental in 100-250 Hz."""
    rng = np.random.default_rng([seed, 7919, speaker])
    f0 = rng.uniform(100.0, 250.0)
    return f0 * np.array([1.0, 2.0, 3.0])


def synth_clip(rng: np.random.Generator, label: Label, speaker: int, seed: int = 0,
               seconds: float = DEFAULT_SECONDS, rate: int = DEFAULT_RATE,
               real_tilt: float = REAL_TILT_DB_PER_OCTAVE, tone_level: float = TONE_LEVEL,
               pivot_hz: float = PIVOT_HZ, fake_tilt: float = FAKE_TILT_DB_PER_OCTAVE) -> Waveform:
    n = int(round(seconds * rate))
    tilt = real_tilt if Label(label) == Label.REAL else fake_tilt
    freqs = np.arange(n // 2 + 1) * rate / n
    octaves = np.log2(np.maximum(freqs, pivot_hz) / pivot_hz)
    gain = 10.0 ** (tilt * octaves / 20.0)
    noise = fft.irfft(fft.rfft(rng.standard_normal(n)) * gain, n)
    noise /= np.max(np.abs(noise))
    t = np.arange(n) / rate
    tones = sum(np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi)) for f in speaker_tones(speaker, seed))
    return peak_normalize(Waveform(noise + tone_level * tones / 3.0, rate))


def make_toy_corpus(out_dir, n_real: int = 300, n_fake: int = 300, n_speakers: int = 10,
                    seed: int = 0, **clip_kw) -> Manifest:
    """Write WAV clips and ``manifest.tsv`` under ``out_dir``; speakers are assigned round-robin."""
    out_dir = Path(out_dir)
    (out_dir / "clips").mkdir(parents=True, exist_ok=True)
    records = []
    for label, count in ((Label.REAL, n_real), (Label.FAKE, n_fake)):
        for i in range(count):
            speaker = i % n_speakers
            file_id = f"{label.value}_{i:04d}"
            rng = np.random.default_rng([seed, 0 if label == Label.REAL else 1, i])
            write_wav(synth_clip(rng, label, speaker, seed, **clip_kw), out_dir / "clips" / f"{file_id}.wav")
            records.append(SampleRecord(file_id, f"clips/{file_id}.wav", f"SPK{speaker:02d}", label))
    manifest = Manifest(records, base_dir=out_dir)
    write_manifest(manifest, out_dir / "manifest.tsv")
    return manifest
