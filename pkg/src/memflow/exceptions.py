"""Error types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericalError -> 4.
"""


class ConfigError(Exception):
    """Invalid configuration or incompatible setup-time options."""


class ShapeError(ConfigError, ValueError):
    """Tensor/matrix shapes do not match their declared contract."""


class DataError(Exception):
    """Malformed dataset files or inconsistent data content."""


class NumericalError(RuntimeError):
    """Non-finite values encountered during optimization."""


class ContractError(RuntimeError):
    """An API precondition was violated (wrong tensor kind, repeated denormalization)."""
