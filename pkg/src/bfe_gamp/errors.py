"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An input lies outside the documented parameter domain."""


class NumericalError(ArithmeticError):
    """Non-finite values or a failed inner numerical routine.

    ``state`` optionally carries the iterate at the point of failure so that
    callers can build a partial report.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class UnsupportedModeError(NotImplementedError):
    """The requested estimation mode is not defined for a penalty family."""


class DegenerateCurvatureError(ArithmeticError):
    """A variance-gradient term is non-positive after clamping."""


class InvariantViolation(AssertionError):
    """A property that must hold by construction was observed to fail."""
