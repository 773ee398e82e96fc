"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration or precondition violation.

    ``field`` names the offending configuration key (dotted path) when known.
    """

    def __init__(self, message, field=None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class NumericalError(FloatingPointError):
    """A computation produced a non-finite value where a finite one is required."""
