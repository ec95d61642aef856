"""Artifact-fake generation from speaker-matched (fake, real) pairs.

Four manipulations are provided. Frequency swaps replace a band of the
fake's full-clip spectrum with the real clip's bins; the time swap copies a
contiguous run of samples; the noise mix adds a scaled copy of the real
clip. All but the time swap are peak-normalised afterwards.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .audio_io import DEFAULT_RATE, DEFAULT_SECONDS, Waveform, load_wav, peak_normalize, standardize, write_wav
from .dataset import Label, Manifest, SampleRecord, speaker_pairs
from .errors import ConfigError, InvalidPairError, WavFormatError, WavParseError
from .spectral import Spectrum, dft_forward, dft_inverse, freq_to_index

log = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.2
DEFAULT_SEGMENT_RANGE = (0.3, 1.0)

# Dynamic band: start ~ U(200 Hz, 0.7 * Nyquist), width ~ U(100, 500) Hz.
DYNAMIC_START_MIN = 200.0
DYNAMIC_START_FRACTION = 0.7
DYNAMIC_WIDTH = (100.0, 500.0)


class ArtifactKind(str, Enum):
    FIXED_FREQ = "fixed_freq"
    TIME_SEGMENT = "time_segment"
    DYNAMIC_FREQ = "dynamic_freq"
    BACKGROUND_NOISE = "background_noise"


@dataclass(frozen=True)
class BandSpec:
    f_start: float
    f_end: float

    def __post_init__(self):
        if not 0 < self.f_start < self.f_end:
            raise ConfigError(f"invalid band {self.f_start}-{self.f_end} Hz")

    def check(self, sample_rate: int) -> None:
        if self.f_end > sample_rate / 2:
            raise ConfigError(f"band end {self.f_end} Hz above Nyquist {sample_rate / 2} Hz")

    def indices(self, sample_rate: int, n: int) -> tuple[int, int]:
        self.check(sample_rate)
        return freq_to_index(self.f_start, sample_rate, n), freq_to_index(self.f_end, sample_rate, n)

    @classmethod
    def parse(cls, text: str) -> "BandSpec":
        """``"2000:3500"`` -> BandSpec(2000, 3500)."""
        try:
            lo, hi = (float(v) for v in text.replace("-", ":").split(":"))
        except ValueError:
            raise ConfigError(f"band must look like START:END, got {text!r}") from None
        return cls(lo, hi)


FIXED_BANDS = {
    "2000-2500": BandSpec(2000.0, 2500.0),
    "2000-3500": BandSpec(2000.0, 3500.0),
}


@dataclass(frozen=True)
class ArtifactConfig:
    kind: ArtifactKind
    band: BandSpec | None = None
    noise_alpha: float = DEFAULT_ALPHA
    segment_range: tuple[float, float] = DEFAULT_SEGMENT_RANGE
    seed: int = 0

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", ArtifactKind(self.kind))
        except ValueError:
            raise ConfigError(f"unknown artifact kind {self.kind!r}") from None
        if self.kind == ArtifactKind.FIXED_FREQ and self.band is None:
            object.__setattr__(self, "band", FIXED_BANDS["2000-3500"])
        if not 0 < self.noise_alpha < 1:
            raise ConfigError(f"noise_alpha must be in (0, 1), got {self.noise_alpha}")
        lo, hi = self.segment_range
        if not 0 < lo <= hi:
            raise ConfigError(f"invalid segment range {self.segment_range}")
        object.__setattr__(self, "segment_range", (float(lo), float(hi)))


def _check_pair(fake: Waveform, real: Waveform) -> None:
    if len(fake) != len(real) or fake.sample_rate != real.sample_rate:
        raise InvalidPairError(
            f"pair mismatch: fake {len(fake)} @ {fake.sample_rate} Hz, real {len(real)} @ {real.sample_rate} Hz")


def swap_bins(fake: Spectrum, real: Spectrum, start: int, end: int) -> Spectrum:
    """Copy one-sided bins ``start <= k < end`` from ``real`` into ``fake``."""
    bins = fake.bins.copy()
    bins[start:end] = real.bins[start:end]
    return Spectrum(bins, fake.n, fake.sample_rate)


def fixed_freq_swap(fake: Waveform, real: Waveform, band: BandSpec) -> Waveform:
    _check_pair(fake, real)
    start, end = band.indices(fake.sample_rate, len(fake))
    swapped = swap_bins(dft_forward(fake), dft_forward(real), start, end)
    return peak_normalize(dft_inverse(swapped))


def replace_segment(fake: Waveform, real: Waveform, start: int, end: int) -> Waveform:
    _check_pair(fake, real)
    out = fake.samples.copy()
    out[start:end] = real.samples[start:end]
    return Waveform(out, fake.sample_rate)


def draw_segment(rng: np.random.Generator, n: int, sample_rate: int,
                 segment_range=DEFAULT_SEGMENT_RANGE) -> tuple[int, int]:
    lo, hi = segment_range
    if hi * sample_rate > n:
        raise ConfigError(f"segment up to {hi} s does not fit a {n / sample_rate:.3f} s clip")
    length = int(round(rng.uniform(lo, hi) * sample_rate))
    start = int(rng.integers(0, n - length, endpoint=True))
    return start, start + length


def time_segment_swap(fake: Waveform, real: Waveform, rng: np.random.Generator,
                      segment_range=DEFAULT_SEGMENT_RANGE) -> tuple[Waveform, tuple[int, int]]:
    """Replace a random run of samples ``[start, end)`` with the real clip's samples.

    No normalisation: samples outside the segment stay bit-identical to the fake.
    """
    _check_pair(fake, real)
    start, end = draw_segment(rng, len(fake), fake.sample_rate, segment_range)
    return replace_segment(fake, real, start, end), (start, end)


def draw_dynamic_band(rng: np.random.Generator, sample_rate: int) -> BandSpec:
    nyquist = sample_rate / 2
    f_start = rng.uniform(DYNAMIC_START_MIN, DYNAMIC_START_FRACTION * nyquist)
    width = rng.uniform(*DYNAMIC_WIDTH)
    return BandSpec(f_start, min(f_start + width, nyquist))


def dynamic_freq_swap(fake: Waveform, real: Waveform,
                      rng: np.random.Generator) -> tuple[Waveform, BandSpec]:
    _check_pair(fake, real)
    band = draw_dynamic_band(rng, fake.sample_rate)
    return fixed_freq_swap(fake, real, band), band


def background_noise_mix(fake: Waveform, real: Waveform, alpha: float = DEFAULT_ALPHA) -> Waveform:
    _check_pair(fake, real)
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must be in (0, 1), got {alpha}")
    return peak_normalize(Waveform(fake.samples + alpha * real.samples, fake.sample_rate))


# ------------------------------------------------------------------ batch runs


def file_seed(master_seed: int, file_id: str) -> list[int]:
    digest = hashlib.sha256(file_id.encode("utf-8")).digest()
    return [int(master_seed) & 0xFFFFFFFFFFFFFFFF, int.from_bytes(digest[:8], "little")]


def file_rng(master_seed: int, file_id: str) -> np.random.Generator:
    """Counter-based generator keyed by (master seed, file id); independent of processing order."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(file_seed(master_seed, file_id))))


def apply_artifact(config: ArtifactConfig, fake: Waveform, real: Waveform,
                   rng: np.random.Generator) -> tuple[Waveform, dict]:
    """Run the configured generator; returns the clip and its provenance fields."""
    kind = config.kind
    if kind == ArtifactKind.FIXED_FREQ:
        return fixed_freq_swap(fake, real, config.band), {"band": [config.band.f_start, config.band.f_end]}
    if kind == ArtifactKind.DYNAMIC_FREQ:
        out, band = dynamic_freq_swap(fake, real, rng)
        return out, {"band": [band.f_start, band.f_end]}
    if kind == ArtifactKind.TIME_SEGMENT:
        out, (start, end) = time_segment_swap(fake, real, rng, config.segment_range)
        sr = fake.sample_rate
        return out, {"segment": [start, end], "segment_seconds": [start / sr, end / sr]}
    out = background_noise_mix(fake, real, config.noise_alpha)
    return out, {"alpha": config.noise_alpha}


@dataclass
class GenerationResult:
    manifest: Manifest
    provenance: list[dict] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)  # fakes whose speaker has no reals
    failed: list[str] = field(default_factory=list)   # fakes whose audio could not be read


def generate_artifact_set(manifest: Manifest, config: ArtifactConfig, out_dir, *,
                          seconds: float = DEFAULT_SECONDS, rate: int = DEFAULT_RATE,
                          jobs: int = 1) -> GenerationResult:
    """Create one artifact-fake clip per fake record, paired with a same-speaker real.

    Clips go to ``out_dir/<fake_id>__<kind>.wav`` and a JSON-lines
    provenance log to ``out_dir/provenance.jsonl``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    kind = config.kind.value
    index = speaker_pairs(manifest)
    for speaker in index:
        index[speaker][0].sort(key=lambda r: r.file_id)
    fakes = sorted(manifest.with_label(Label.FAKE), key=lambda r: r.file_id)

    def load(rec: SampleRecord) -> Waveform:
        return standardize(load_wav(manifest.resolve(rec)), seconds, rate)

    def work(fake_rec: SampleRecord):
        reals = index[fake_rec.speaker_id][0]
        if not reals:
            return "skipped", fake_rec, None
        rng = file_rng(config.seed, fake_rec.file_id)
        real_rec = reals[int(rng.integers(len(reals)))]
        assert real_rec.speaker_id == fake_rec.speaker_id
        try:
            fake_w, real_w = load(fake_rec), load(real_rec)
        except (OSError, WavFormatError, WavParseError) as exc:
            log.error("cannot read audio for %s: %s", fake_rec.file_id, exc)
            return "failed", fake_rec, None
        clip, details = apply_artifact(config, fake_w, real_w, rng)
        file_id = f"{fake_rec.file_id}__{kind}"
        write_wav(clip, out_dir / f"{file_id}.wav")
        prov = {"artifact_id": file_id, "fake_id": fake_rec.file_id, "real_id": real_rec.file_id,
                "speaker_id": fake_rec.speaker_id, "kind": kind, "master_seed": config.seed,
                "file_seed": file_seed(config.seed, fake_rec.file_id), **details}
        record = SampleRecord(file_id, str((out_dir / f"{file_id}.wav").resolve()),
                              fake_rec.speaker_id, Label.ARTIFACT)
        return "ok", record, prov

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(work, fakes))
    else:
        outcomes = [work(f) for f in fakes]

    result = GenerationResult(Manifest([], manifest.split))
    records = []
    for status, rec, prov in outcomes:
        if status == "ok":
            records.append(rec)
            result.provenance.append(prov)
        elif status == "skipped":
            result.skipped.append(rec.file_id)
        else:
            result.failed.append(rec.file_id)
    result.manifest = Manifest(records, manifest.split, manifest.base_dir)

    with open(out_dir / "provenance.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for prov in result.provenance:
            fh.write(json.dumps(prov, sort_keys=True) + "\n")
    if result.skipped:
        log.warning("skipped %d fakes whose speaker has no real samples: %s",
                    len(result.skipped), ", ".join(result.skipped[:5]))
    log.info("%s: generated %d, skipped %d, failed %d", kind, len(records),
             len(result.skipped), len(result.failed))
    return result
