"""Simulation and control of a quadrotor tethered to the ground by a chain of rigid links."""

from .errors import ConfigError, ControlError, NumericalError, TetherError
from .model import ChainState, BodyState, ControlInput, SystemParams

__version__ = "0.1.0"

__all__ = ["BodyState", "ChainState", "ConfigError", "ControlError", "ControlInput",
           "NumericalError", "SystemParams", "TetherError", "__version__"]
