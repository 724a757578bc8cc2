class TdpidError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(TdpidError):
    """Invalid input data, dimensions, or configuration."""


class ComputationError(TdpidError):
    """A numerical procedure failed (eigensolver, root count, divergence)."""
