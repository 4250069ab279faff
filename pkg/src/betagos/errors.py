class BetaGosError(Exception):
    """Base class for package errors."""


class InputError(BetaGosError, ValueError):
    """Malformed user input (bad file rows, invalid flags, inconsistent shapes)."""


class DomainError(BetaGosError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class NumericError(BetaGosError, RuntimeError):
    """A computation produced non-finite or otherwise unusable numbers."""
