"""Exception taxonomy shared across the package.

Error classes map onto the CLI exit codes: configuration and contract
violations exit 1, file/format problems exit 2.
"""


class SwhnetError(Exception):
    """Base class for all package errors."""


class ShapeError(SwhnetError, ValueError):
    """Operands have incompatible shapes or an axis is out of range."""


class ContractError(SwhnetError, ValueError):
    """A documented precondition was violated by the caller."""


class ConfigError(SwhnetError, ValueError):
    """Invalid, unknown, or inconsistent configuration."""


class NonFiniteError(SwhnetError, ArithmeticError):
    """A forward operation produced NaN or Inf from finite inputs."""


class FormatError(SwhnetError, ValueError):
    """Malformed, truncated, or version-incompatible input file."""
