"""Exception types shared across the package."""


class TetherError(Exception):
    """Base class for all package errors."""


class ConfigError(TetherError):
    """Invalid or unparseable scenario configuration."""


class NumericalError(TetherError):
    """Singular solve, non-finite value or divergence during simulation.

    ``state`` holds a dump of the offending state when available.
    """

    def __init__(self, message, t=None, state=None):
        if t is not None:
            message = f"t={t:.6g}: {message}"
        super().__init__(message)
        self.t = t
        self.state = state


class ControlError(NumericalError):
    """A controller hit one of its singular configurations."""
