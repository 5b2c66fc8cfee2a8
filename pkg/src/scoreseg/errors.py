"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class NonFiniteError(FloatingPointError):
    """A NaN or infinity showed up where a finite value is required.

    ``index`` identifies where (batch item, sampler level, training step)
    depending on the raiser.
    """

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class FileFormatError(ValueError):
    """A file on disk does not match its expected format."""
