"""Exception types shared across the package."""


class InputError(ValueError):
    """Raised when user-supplied data (p-values, e-values, tables) is malformed."""


class ConfigurationError(ValueError):
    """Raised when procedure settings (levels, weights, rejection functions) are invalid."""
