"""Exception taxonomy shared across the package.

The CLI maps each class to a distinct exit code, so raising the right
type matters more than the message text.
"""


class EvsentinelError(Exception):
    """Base class for all package errors."""


class ShapeError(EvsentinelError):
    """Array dimensions disagree with what an operation requires."""


class DomainError(EvsentinelError):
    """Argument outside the mathematical domain of a function."""


class ContractError(EvsentinelError):
    """A caller violated a documented precondition."""


class DataError(EvsentinelError):
    """Input data is malformed, inconsistent, or unusable."""


class DegenerateInputError(EvsentinelError):
    """Input is technically valid but has no meaningful answer."""


class ConfigError(EvsentinelError):
    """Configuration values are invalid or mutually inconsistent."""


class NumericError(EvsentinelError):
    """A computation produced non-finite values or diverged."""
