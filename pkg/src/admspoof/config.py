"""Pipeline configuration: one JSON document, validated on load.

Resolution order for the global settings is command-line flag, then
environment variable (``ADMSPOOF_SEED``, ``ADMSPOOF_JOBS``,
``ADMSPOOF_WORKDIR``, ``ADMSPOOF_CONFIG``), then the config file, then the
built-in defaults below.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import get_type_hints

from .artifact_gen import ArtifactConfig, ArtifactKind, BandSpec
from .errors import ConfigError
from .model import Freeze, TrainConfig
from .spectral import MelParams

ENV_PREFIX = "ADMSPOOF_"


@dataclass(frozen=True)
class AudioSection:
    seconds: float = 3.0
    rate: int = 16000


@dataclass(frozen=True)
class MelSection:
    n_fft: int = 2048
    hop: int = 512
    n_mels: int = 128
    fmin: float = 0.0
    fmax: float | None = None
    floor_db: float = -80.0


@dataclass(frozen=True)
class ArtifactSection:
    kinds: tuple[str, ...] = ("dynamic_freq",)
    band: tuple[float, float] = (2000.0, 3500.0)
    noise_alpha: float = 0.2
    segment_range: tuple[float, float] = (0.3, 1.0)


@dataclass(frozen=True)
class SplitSection:
    fractions: tuple[float, float, float] = (0.7, 0.2, 0.1)


@dataclass(frozen=True)
class TrainSection:
    epochs: int = 50
    lr0: float = 1e-3
    decay_factor: float = 0.5
    decay_every: int = 10
    l2: float = 1e-4
    dropout_p: float = 0.5
    batch: int = 16
    momentum: float = 0.9
    final_freeze: str = "none"
    # optional per-stage overrides of ``epochs``: {"baseline": n, "adm": n, "final": n}
    stage_epochs: dict | None = None


@dataclass(frozen=True)
class PipelineConfig:
    workdir: str = "work"
    corpus_root: str | None = None
    seed: int = 0
    jobs: int = 1
    audio: AudioSection = AudioSection()
    mel: MelSection = MelSection()
    artifact: ArtifactSection = ArtifactSection()
    split: SplitSection = SplitSection()
    train: TrainSection = TrainSection()

    def __post_init__(self):
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")
        if self.audio.seconds <= 0 or self.audio.rate <= 0:
            raise ConfigError("audio seconds and rate must be positive")
        for kind in self.artifact.kinds:
            if kind not in {k.value for k in ArtifactKind}:
                raise ConfigError(f"unknown artifact kind {kind!r}")
        try:
            Freeze(self.train.final_freeze)
        except ValueError:
            raise ConfigError(f"unknown final_freeze {self.train.final_freeze!r}") from None
        if self.train.stage_epochs:
            bad = set(self.train.stage_epochs) - {"baseline", "adm", "final"}
            if bad:
                raise ConfigError(f"unknown stages in stage_epochs: {sorted(bad)}")
            if any(not isinstance(v, int) or v <= 0 for v in self.train.stage_epochs.values()):
                raise ConfigError("stage_epochs values must be positive integers")
        # surface invalid values now rather than halfway through a run
        self.mel_params()
        self.train_config()
        for kind in self.artifact.kinds:
            self.artifact_config(kind)

    # ---------------------------------------------------------------- views

    def mel_params(self) -> MelParams:
        m = self.mel
        if m.n_fft <= 0 or m.hop <= 0 or m.n_mels <= 0:
            raise ConfigError("mel n_fft, hop and n_mels must be positive")
        return MelParams(m.n_fft, m.hop, m.n_mels, self.audio.rate, m.fmin, m.fmax, m.floor_db)

    def train_config(self) -> TrainConfig:
        t = self.train
        try:
            return TrainConfig(t.epochs, t.lr0, t.decay_factor, t.decay_every, t.l2, t.dropout_p,
                               t.batch, t.momentum, self.seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def artifact_config(self, kind: str) -> ArtifactConfig:
        a = self.artifact
        band = BandSpec(*a.band) if kind == ArtifactKind.FIXED_FREQ.value else None
        return ArtifactConfig(kind, band, a.noise_alpha, tuple(a.segment_range), self.seed)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


# ------------------------------------------------------------------- loading


def _coerce(value, hint, where: str):
    origin = getattr(hint, "__origin__", None)
    text = str(hint)
    if value is None:
        if "None" in text:
            return None
        raise ConfigError(f"{where}: null not allowed")
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false")
        return value
    if hint is int or text.startswith("int"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if hint is float or text.startswith("float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if hint is str or text.startswith("str"):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if origin is tuple or text.startswith("tuple"):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        args = hint.__args__
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], where) for v in value)
        if len(value) != len(args):
            raise ConfigError(f"{where}: expected {len(args)} values, got {len(value)}")
        return tuple(_coerce(v, a, where) for v, a in zip(value, args))
    if "dict" in text:
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected an object, got {value!r}")
        return dict(value)
    raise ConfigError(f"{where}: unsupported type {hint}")  # pragma: no cover


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected an object")
    hints = get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s) {', '.join(where + k for k in unknown)}")
    kwargs = {}
    for name, value in data.items():
        hint = hints[name]
        if is_dataclass(hint):
            kwargs[name] = _build(hint, value, f"{where}{name}.")
        else:
            kwargs[name] = _coerce(value, hint, where + name)
    return cls(**kwargs)


def load_config(path=None, overrides: dict | None = None, env=None) -> PipelineConfig:
    """Defaults, then the JSON file, then environment variables, then ``overrides``."""
    env = os.environ if env is None else env
    data: dict = {}
    if path is None:
        path = env.get(ENV_PREFIX + "CONFIG") or None
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(str(p))
        try:
            data = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from None
    cfg = _build(PipelineConfig, data, "")
    top = {}
    for key, conv in (("seed", int), ("jobs", int), ("workdir", str)):
        raw = env.get(ENV_PREFIX + key.upper())
        if raw is not None:
            try:
                top[key] = conv(raw)
            except ValueError:
                raise ConfigError(f"{ENV_PREFIX}{key.upper()}={raw!r} is not a valid {conv.__name__}") from None
    top.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return replace(cfg, **top) if top else cfg
