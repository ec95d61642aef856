"""Exception hierarchy shared across the pipeline."""


class AdmSpoofError(Exception):
    """Base class for all package errors."""


class InvalidInputError(AdmSpoofError, ValueError):
    pass


class WavFormatError(AdmSpoofError):
    """The file is a WAV container but uses an unsupported encoding."""


class WavParseError(AdmSpoofError):
    """The file is not a well-formed RIFF/WAVE stream (bad header, truncation)."""


class InvalidPairError(InvalidInputError):
    """A (fake, real) pair does not share length and sample rate."""


class ConfigError(AdmSpoofError, ValueError):
    pass


class ManifestError(AdmSpoofError, ValueError):
    """Manifest content failed validation (duplicates, unknown labels, bad columns)."""


class MaterializationError(AdmSpoofError):
    """Feature files referenced by a manifest are missing."""

    def __init__(self, missing):
        self.missing = sorted(missing)
        preview = ", ".join(self.missing[:10])
        more = "" if len(self.missing) <= 10 else f" (+{len(self.missing) - 10} more)"
        super().__init__(f"missing features for {len(self.missing)} ids: {preview}{more}")


class MetricError(AdmSpoofError, ValueError):
    """Metric is undefined for the given score set (e.g. single class)."""


class DimensionError(AdmSpoofError, ValueError):
    pass


class CheckpointError(AdmSpoofError):
    pass
