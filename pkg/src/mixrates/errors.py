"""Exception types shared across the package."""


class MixratesError(Exception):
    """Base class for all package errors."""


class ConfigurationError(MixratesError, ValueError):
    """Invalid parameters, specs or file contents supplied by the caller."""


class DomainError(MixratesError, ValueError):
    """A formula was evaluated outside the range where it is defined."""
