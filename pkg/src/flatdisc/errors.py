"""Exception types raised across the package."""


class FlatnessError(Exception):
    """Base class for all errors raised by flatdisc."""


class NumericError(FlatnessError, ArithmeticError):
    """A computation produced non-finite values."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class StepFailure(FlatnessError):
    """An implicit step (or any Newton solve) did not converge.

    The attached ``report`` holds the iteration count and final residual.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class RankConditionError(FlatnessError):
    """The solvability (rank) conditions of a triangular form fail."""

    def __init__(self, message, block=None, report=None):
        super().__init__(message)
        self.block = block
        self.report = report


class ParameterizationError(FlatnessError):
    """Evaluating a parameterizing map failed in one of its block solves."""

    def __init__(self, message, block=None, shift=None):
        super().__init__(message)
        self.block = block
        self.shift = shift


class SingularityError(FlatnessError):
    """A closed-form map was evaluated on its singular locus."""


class ControllerFault(FlatnessError):
    """A stage of the discrete control law failed.

    ``stage`` is one of ``"transform"``, ``"psi_hat"``, ``"feedback"``,
    ``"input"``.
    """

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage
