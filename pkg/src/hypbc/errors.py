"""Exception types shared across the package."""

from __future__ import annotations


class HypbcError(Exception):
    """Base class for all package errors."""


class ParameterError(HypbcError, ValueError):
    """A plant, controller, or solver parameter violates its contract."""


class ConfigurationError(HypbcError, ValueError):
    """A configuration is inconsistent (CFL violation, degenerate setup)."""


class AssumptionError(ConfigurationError):
    """The integral-weight solvability condition is violated (the
    boundary factor is numerically indistinguishable from zero)."""


class SignalError(HypbcError, ValueError):
    """A time signal does not support the requested operation, e.g. a
    derivative of a non-differentiable noise generator."""


class SolverError(HypbcError, RuntimeError):
    """An iterative solver failed to converge.

    Attributes:
        residual_history: per-sweep sup-norm updates, for diagnostics.
    """

    def __init__(self, message: str, residual_history=None):
        super().__init__(message)
        self.residual_history = list(residual_history or [])


class DivergenceError(HypbcError, RuntimeError):
    """A simulation produced non-finite values.

    Attributes:
        last_valid_time: the last time at which the state was finite.
    """

    def __init__(self, message: str, last_valid_time: float):
        super().__init__(message)
        self.last_valid_time = last_valid_time


class ScenarioError(HypbcError, ValueError):
    """A scenario file is malformed. Carries the offending field path."""

    def __init__(self, message: str, field: str = ""):
        super().__init__(message if not field else f"{field}: {message}")
        self.field = field
