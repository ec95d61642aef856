"""Manifests, speaker indexing, splits and task views.

A manifest is a headerless UTF-8 TSV with four columns:
``file_id  path  speaker_id  label`` where label is ``real``, ``fake``
or ``artifact``. Relative paths resolve against the manifest's directory.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ManifestError, MaterializationError
from .spectral import read_melf

SPLITS = ("train", "val", "test")


class Label(str, Enum):
    REAL = "real"
    FAKE = "fake"
    ARTIFACT = "artifact"


class Task(str, Enum):
    MAIN = "main"  # real (1) vs fake (0)
    ADM = "adm"    # artifact-fake (1) vs original fake (0)


@dataclass(frozen=True)
class SampleRecord:
    file_id: str
    path: str
    speaker_id: str
    label: Label

    def __post_init__(self):
        try:
            object.__setattr__(self, "label", Label(self.label))
        except ValueError:
            raise ManifestError(f"{self.file_id}: unknown label {self.label!r}") from None
        if not self.file_id:
            raise ManifestError("empty file_id")


@dataclass(frozen=True)
class Manifest:
    records: tuple[SampleRecord, ...]
    split: str | None = None
    base_dir: Path = field(default=Path("."), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        seen = set()
        for r in self.records:
            if r.file_id in seen:
                raise ManifestError(f"duplicate file_id {r.file_id!r}")
            seen.add(r.file_id)
        if self.split is not None and self.split not in SPLITS:
            raise ManifestError(f"unknown split {self.split!r}")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def with_label(self, label: Label) -> list[SampleRecord]:
        return [r for r in self.records if r.label == label]

    def resolve(self, record: SampleRecord) -> Path:
        p = Path(record.path)
        return p if p.is_absolute() else self.base_dir / p


def parse_manifest(path, split: str | None = None) -> Manifest:
    path = Path(path)
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) != 4:
                raise ManifestError(f"{path}:{lineno}: expected 4 tab-separated columns, got {len(cols)}")
            file_id, rel, speaker, label = cols
            try:
                records.append(SampleRecord(file_id, rel, speaker, label))
            except ManifestError as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from None
    return Manifest(records, split, path.parent)


def write_manifest(manifest: Manifest, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in manifest.records:
            fh.write(f"{r.file_id}\t{r.path}\t{r.speaker_id}\t{r.label.value}\n")


def import_asvspoof_protocol(path, audio_root, ext: str = ".wav") -> Manifest:
    """Convert an ASVspoof LA protocol (``SPK FILE - - bonafide|spoof``) to a manifest."""
    path = Path(path)
    keymap = {"bonafide": Label.REAL, "spoof": Label.FAKE}
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 5:
                raise ManifestError(f"{path}:{lineno}: expected 5 fields, got {len(fields)}")
            speaker, name, _, _, key = fields
            if key not in keymap:
                raise ManifestError(f"{path}:{lineno}: unknown key {key!r}")
            records.append(SampleRecord(name, str(Path(audio_root) / f"{name}{ext}"), speaker, keymap[key]))
    return Manifest(records)


def _allocate(n: int, fractions: tuple[float, ...]) -> list[int]:
    # largest remainder; ties go to the earlier split
    quotas = [n * f for f in fractions]
    counts = [math.floor(q) for q in quotas]
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def split_random(manifest: Manifest, fractions=(0.7, 0.2, 0.1), seed: int = 0) -> tuple[Manifest, ...]:
    """Stratified random split into train/val/test manifests."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != len(SPLITS):
        raise ManifestError(f"need {len(SPLITS)} fractions, got {len(fractions)}")
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ManifestError(f"fractions must be non-negative and sum to 1, got {fractions}")
    if len(manifest) < len(SPLITS):
        raise ManifestError(f"cannot split {len(manifest)} records into {len(SPLITS)} parts")

    rng = np.random.default_rng(seed)
    parts: list[list[SampleRecord]] = [[] for _ in SPLITS]
    for label in Label:
        group = sorted(manifest.with_label(label), key=lambda r: r.file_id)
        if not group:
            continue
        perm = rng.permutation(len(group))
        start = 0
        for i, count in enumerate(_allocate(len(group), fractions)):
            parts[i].extend(group[j] for j in perm[start: start + count])
            start += count
    return tuple(
        Manifest(sorted(p, key=lambda r: r.file_id), name, manifest.base_dir)
        for name, p in zip(SPLITS, parts)
    )


def speaker_pairs(manifest: Manifest) -> dict[str, tuple[list[SampleRecord], list[SampleRecord]]]:
    """speaker_id -> (reals, fakes). Artifact records are not indexed."""
    index: dict[str, tuple[list, list]] = {}
    for r in manifest.records:
        reals, fakes = index.setdefault(r.speaker_id, ([], []))
        if r.label == Label.REAL:
            reals.append(r)
        elif r.label == Label.FAKE:
            fakes.append(r)
    return index


@dataclass(frozen=True, eq=False)
class TaskView:
    ids: tuple[str, ...]
    features: np.ndarray  # [n, n_mels, n_frames], float32
    labels: np.ndarray    # [n], 0/1

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self):
        return iter(zip(self.features, self.labels.tolist()))

    def subset(self, index) -> "TaskView":
        index = np.asarray(index)
        return TaskView(tuple(self.ids[i] for i in index), self.features[index], self.labels[index])


TASK_LABELS = {
    Task.MAIN: {Label.REAL: 1, Label.FAKE: 0},
    Task.ADM: {Label.FAKE: 0, Label.ARTIFACT: 1},
}


def feature_path(feature_dir, file_id: str) -> Path:
    return Path(feature_dir) / f"{file_id}.melf"


def build_task_view(manifests: Iterable[Manifest], task, features) -> TaskView:
    """Labelled features for one training objective.

    ``features`` is either a directory of ``<file_id>.melf`` files or a
    mapping from file_id to matrix. Records whose label is not part of the
    task are left out.
    """
    task = Task(task)
    labels = TASK_LABELS[task]
    chosen = [r for m in manifests for r in m.records if r.label in labels]
    positive = Label.REAL if task == Task.MAIN else Label.ARTIFACT
    for needed in labels:
        if not any(r.label == needed for r in chosen):
            raise ManifestError(f"{task.value} view has no {needed.value} records")

    mats, missing = [], []
    for r in chosen:
        if isinstance(features, Mapping):
            m = features.get(r.file_id)
            if m is None:
                missing.append(r.file_id)
            else:
                mats.append(np.asarray(m, dtype=np.float32))
        else:
            p = feature_path(features, r.file_id)
            if not p.exists():
                missing.append(r.file_id)
            else:
                mats.append(read_melf(p))
    if missing:
        raise MaterializationError(missing)
    y = np.array([labels[r.label] for r in chosen], dtype=np.int64)
    assert int(y.sum()) == sum(r.label == positive for r in chosen)
    return TaskView(tuple(r.file_id for r in chosen), np.stack(mats), y)
