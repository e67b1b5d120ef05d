"""Exception types shared across the pipeline."""


class PolypGenError(Exception):
    """Base class for pipeline failures."""


class ConfigurationError(PolypGenError):
    """Invalid configuration value or combination."""


class ManifestError(PolypGenError):
    """Malformed dataset manifest."""


class FormatError(PolypGenError):
    """Malformed binary file (image, feature store, or checkpoint)."""


class PlacementError(PolypGenError):
    """Could not place a mask satisfying the requested constraints."""


class TrainingError(PolypGenError):
    """Training aborted on a numerical failure."""


class IngestionError(PolypGenError):
    """A required input record is missing or inconsistent."""
