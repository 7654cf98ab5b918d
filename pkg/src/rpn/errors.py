class FormatError(ValueError):
    """Malformed container, stream or image file (CLI exit code 2)."""


class ConfigError(ValueError):
    """Invalid configuration, checkpoint or dataset (CLI exit code 3)."""


class InsufficientLayersError(ValueError):
    """Requested level is not present in a (truncated) container."""
