"""Exception types raised across the package."""


class ConfigError(ValueError):
    """Invalid model or experiment parameters."""


class NumericalError(ArithmeticError):
    """A numerical routine failed or an asserted bound was violated.

    ``diagnostics`` carries whatever the failing routine knew at the time.
    """

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics
