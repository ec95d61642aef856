"""Glue between manifests, audio and stored features.

Featurisation is the same for every clip: standardise to the target
duration and rate, peak-normalise, then take the dB mel matrix.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio_io import DEFAULT_RATE, DEFAULT_SECONDS, load_wav, peak_normalize, standardize
from .dataset import Manifest, SampleRecord, TaskView, feature_path
from .errors import WavFormatError, WavParseError
from .metrics import ScoreSet
from .model import DetectorModel, predict
from .spectral import MelParams, mel_spectrogram, render_image, save_png, write_melf

log = logging.getLogger(__name__)


def featurize_clip(path, params: MelParams = MelParams(), seconds: float = DEFAULT_SECONDS,
                   rate: int = DEFAULT_RATE) -> np.ndarray:
    """dB mel matrix ``[n_mels, n_frames]`` (float32) of one audio file."""
    w = peak_normalize(standardize(load_wav(path), seconds, rate))
    return mel_spectrogram(w, params).values.astype(np.float32)


@dataclass
class FeaturizeResult:
    written: list[str] = field(default_factory=list)
    reused: list[str] = field(default_factory=list)
    failed: list[str] = field(default_factory=list)


def featurize_manifest(manifest: Manifest, out_dir, params: MelParams = MelParams(), *,
                       seconds: float = DEFAULT_SECONDS, rate: int = DEFAULT_RATE, jobs: int = 1,
                       overwrite: bool = False, png_dir=None) -> FeaturizeResult:
    """Write ``out_dir/<file_id>.melf`` for every record; unreadable clips are collected, not raised.

    Existing files are kept unless ``overwrite``; featurisation is
    deterministic so a rerun would write identical bytes anyway.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if png_dir is not None:
        Path(png_dir).mkdir(parents=True, exist_ok=True)

    def work(rec: SampleRecord):
        target = feature_path(out_dir, rec.file_id)
        if target.exists() and not overwrite and png_dir is None:
            return "reused", rec.file_id
        try:
            w = peak_normalize(standardize(load_wav(manifest.resolve(rec)), seconds, rate))
        except (OSError, WavFormatError, WavParseError) as exc:
            log.error("cannot featurize %s: %s", rec.file_id, exc)
            return "failed", rec.file_id
        mel = mel_spectrogram(w, params)
        write_melf(target, mel.values.astype(np.float32))
        if png_dir is not None:
            save_png(render_image(mel), Path(png_dir) / f"{rec.file_id}.png")
        return "written", rec.file_id

    records = sorted(manifest.records, key=lambda r: r.file_id)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(work, records))
    else:
        outcomes = [work(r) for r in records]
    result = FeaturizeResult()
    for status, file_id in outcomes:
        getattr(result, status).append(file_id)
    log.info("featurize: %d written, %d reused, %d failed",
             len(result.written), len(result.reused), len(result.failed))
    return result


def score_view(model: DetectorModel, view: TaskView) -> ScoreSet:
    return ScoreSet(predict(model, view.features), view.labels)


def accuracy(scores: ScoreSet, threshold: float = 0.5) -> float:
    return float(np.mean((scores.scores >= threshold) == (scores.labels == 1)))
