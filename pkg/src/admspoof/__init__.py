"""Identity-independent audio deepfake detection with artifact detection modules."""

__version__ = "0.1.0"
