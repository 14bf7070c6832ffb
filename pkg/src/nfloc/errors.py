"""Exception types shared across the toolkit.

Every failure mode surfaced by the public API maps onto one of these
classes so callers can distinguish bad inputs from numerical trouble.
"""


class NflocError(Exception):
    """Base class for all toolkit-specific errors."""


class ContractViolation(NflocError, ValueError):
    """An argument violated a documented precondition (bad index, shape, norm)."""


class DegenerateGeometryError(NflocError):
    """An anchor/element pair is too close for the propagation model."""


class IntegrationError(NflocError):
    """A waveform integral failed to converge to the requested accuracy."""


class InitializerFailure(NflocError):
    """The closed-form initializer could not produce a usable estimate."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class EstimatorFailure(NflocError):
    """The iterative refinement could not start or produced no usable state."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConfigurationError(NflocError, ValueError):
    """A scenario/sweep configuration is inconsistent or incomplete."""
