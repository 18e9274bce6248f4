"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Invalid argument value (bad label, empty batch, malformed weights...)."""


class DimensionError(ValidationError):
    """Array shapes do not line up."""


class IngestionError(OSError):
    """An image file on disk could not be read or decoded."""


class FormatError(ValueError):
    """A checkpoint or CSV file does not follow its declared layout."""


class ConfigError(ValueError):
    """A scenario config is malformed or misses a required key."""
