"""Exception hierarchy used across the pipeline.

Everything raised on an operational failure derives from :class:`SaferError`
so the CLI can map it to exit code 1 with a structured message.
"""


class SaferError(Exception):
    """Base class for all operational errors."""


class ConfigError(SaferError):
    """Invalid configuration values or inconsistent dimensions."""


class ManifestError(SaferError):
    """Malformed manifest file or invariant violation (duplicate ids, ...)."""


class DetectorError(SaferError):
    """Face-detection backend failure; carries the backend name."""

    def __init__(self, detector: str, message: str):
        self.detector = detector
        super().__init__(f"detector {detector!r}: {message}")


class SceneBackendError(SaferError):
    """Scene-classification backend failure; carries the backend name."""

    def __init__(self, backend: str, message: str):
        self.backend = backend
        super().__init__(f"scene backend {backend!r}: {message}")


class GeometryError(SaferError):
    """Invalid mesh geometry (missing keypoints, coincident eye centers, ...)."""


class ShapeError(SaferError):
    """Tensor shape does not match the contract (expected vs actual)."""


class CheckpointError(SaferError):
    """Unreadable or inconsistent checkpoint / weights file."""


class TrainingError(SaferError):
    """Training could not proceed (empty split, divergence, ...)."""


class CurationError(SaferError):
    """Annotation store, consensus or frame-extraction failure."""
