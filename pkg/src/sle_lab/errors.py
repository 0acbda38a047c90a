"""Exception taxonomy shared by all modules.

Validation errors signal bad inputs or configuration; numerics errors signal
a failure of an otherwise well-posed computation (blowup, swallowed point,
series truncation); the statistical gate error is raised by experiment
drivers when a Monte Carlo acceptance gate fails.
"""


class SleLabError(Exception):
    """Base class for all package errors."""


class ValidationError(SleLabError, ValueError):
    """Malformed input, parameter out of the supported regime, bad config."""


class NumericsError(SleLabError):
    """A numerical computation failed in a detectable way."""


class InsideHullError(NumericsError):
    """Forward map evaluated at a point swallowed by the hull."""

    def __init__(self, message="inside-hull", step_index=None):
        super().__init__(message)
        self.step_index = step_index


class NumericalBlowupError(NumericsError):
    """Non-finite intermediate value during trace or flow computation."""

    def __init__(self, message="numerical blowup", step_index=None):
        super().__init__(message)
        self.step_index = step_index


class FlowTerminatedError(NumericsError):
    """Backward-flow trajectory hit the driving singularity."""

    def __init__(self, message="flow-terminated", exit_time=None):
        super().__init__(message)
        self.exit_time = exit_time


class NotUnzippableError(NumericsError):
    """Curve cannot be unzipped (self-intersecting or non-monotone capacity)."""

    def __init__(self, message="not unzippable", point_index=None):
        super().__init__(message)
        self.point_index = point_index


class BadAnchorError(ValidationError):
    """Curve handed to the extractor does not start at the origin."""


class NotConvergedError(NumericsError):
    """Truncation estimate above the requested tolerance."""

    def __init__(self, message="not converged", estimate=None):
        super().__init__(message)
        self.estimate = estimate


class TruncationOrderError(NumericsError):
    """Series truncation cannot meet the tail bound at the requested time."""

    def __init__(self, message="increase n_max", required_order=None):
        super().__init__(message)
        self.required_order = required_order


class NoStationaryLawError(ValidationError):
    """Stationary construction requested outside the recurrent regime."""


class StatGateError(SleLabError):
    """A statistical acceptance gate failed (CLI exit code 4)."""
