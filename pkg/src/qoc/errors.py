"""Exception types shared across the package."""


class QocError(Exception):
    """Base class for all package-specific errors."""


class InvalidControlError(QocError):
    """A control grid violates a structural invariant (symmetry, bounds, grid)."""


class NotControllableError(QocError):
    """The coupling graph is disconnected, so the transfer is impossible."""


class ConvergenceError(QocError):
    """The solver stopped without meeting its tolerances.

    Carries the best iterate found so far in ``best`` when available.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class ResidualExceededError(QocError):
    """A re-propagated trajectory drifted beyond the requested tolerance."""


class PhaseUndefinedError(QocError):
    """A modulus fell below the zero threshold inside a claimed interval."""


class SupportOverlapError(QocError):
    """Two states meant to have complementary supports overlap."""


class MixedWindowError(QocError):
    """A coordinate crosses the zero threshold inside the requested window."""


class WindowNotFoundError(QocError):
    """No clean sub-window exists near the requested time at grid resolution."""


class DimensionExceededError(QocError):
    """Brute-force Lie closure requested beyond its feasibility bound."""
