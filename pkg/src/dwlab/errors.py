"""Exception hierarchy shared by all dwlab modules."""


class DWLabError(Exception):
    """Base class for every error raised by dwlab."""


class ParameterError(DWLabError, ValueError):
    """An argument lies outside the domain an operation accepts."""


class AssumptionViolation(DWLabError):
    """The multi-agent advantage assumption f(s) > 1 does not hold."""


class GenerationError(DWLabError):
    """A benchmark generator exhausted its retry budget."""


class EvaluationError(DWLabError, ArithmeticError):
    """An expression tree cannot be evaluated exactly."""


class DegenerateProblemError(DWLabError):
    """The unknown has a zero coefficient, so the equation has no unique root."""


class BackendError(DWLabError):
    """An agent or judge backend failed to produce a response."""

    def __init__(self, message, *, task_id=None):
        super().__init__(message)
        self.task_id = task_id
