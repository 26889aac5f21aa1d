"""Exception types raised across the package."""


class GvitError(Exception):
    """Base class for all package errors."""


class DimensionError(GvitError):
    """Operand shapes are incompatible for the requested operation."""


class DomainError(GvitError):
    """An argument value is outside the operation's domain."""


class ConfigError(GvitError):
    """A configuration violates its invariants."""


class ContractError(GvitError):
    """An operation was called in a way its contract forbids."""


class ParseError(GvitError):
    """An input file could not be parsed; message carries the line number."""


class TrainingDiverged(GvitError):
    """Training produced a non-finite loss or parameter."""
