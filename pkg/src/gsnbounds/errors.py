"""Exception hierarchy shared by the gsnbounds modules."""


class GsnError(Exception):
    """Base class for all library errors."""


class DomainError(GsnError, ValueError):
    """A coordinate or argument lies outside the model's domain."""


class ModelError(GsnError, ValueError):
    """A kernel or tabulated model is not a valid autocorrelation."""


class TruncationError(GsnError):
    """A spectral truncation is too short for the requested quantity.

    ``suggested_K_max`` carries an index that would satisfy the check.
    """

    def __init__(self, message, suggested_K_max=None):
        super().__init__(message)
        self.suggested_K_max = suggested_K_max


class RangeError(GsnError, ValueError):
    """A requested rate lies outside the achievable interval."""

    def __init__(self, message, interval=None):
        super().__init__(message)
        self.interval = interval


class RegimeError(GsnError):
    """The power schedule is outside the regime an operation supports."""


class ClassificationError(GsnError, ValueError):
    """Unknown power-schedule family."""


class WindowError(GsnError):
    """The water-level window is empty at the requested N."""


class InvariantError(GsnError, AssertionError):
    """An internal self-check failed; indicates a bug, not bad input."""


class ConfigError(GsnError):
    """Scenario configuration is malformed or out of range."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = list(diagnostics or [message])
