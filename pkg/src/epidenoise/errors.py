"""Exception types shared across modules (the CLI maps them to exit codes)."""


class ConfigurationError(ValueError):
    """Invalid parameters or configuration (exit code 2)."""


class DataError(ValueError):
    """Malformed or inconsistent input data (exit code 3)."""


class NumericalError(RuntimeError):
    """Ill-conditioned or diverging computation (exit code 4)."""
