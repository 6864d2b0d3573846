"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Raised when a config file or parameter set fails validation."""


class NumericalFault(RuntimeError):
    """Raised when an internal computation produces non-finite values."""


class CheckpointError(RuntimeError):
    """Raised when a checkpoint cannot be read back or fails its version check."""
