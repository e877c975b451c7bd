"""Exception hierarchy shared by every solver stage.

Each class carries the process exit code the command line maps it to.
"""


class SelmutError(Exception):
    exit_code = 1


class ValidationError(SelmutError, ValueError):
    """Bad configuration or a datum that violates a standing assumption."""

    exit_code = 2

    def __init__(self, message, problems=None):
        super().__init__(message)
        self.problems = list(problems or [])


class BlowUpError(SelmutError, FloatingPointError):
    exit_code = 3

    def __init__(self, message, step=None, t=None):
        super().__init__(message)
        self.step = step
        self.t = t


class BoundaryContactError(SelmutError):
    """The maximum of a field reached (or came too close to) the grid edge."""

    exit_code = 4

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class DegeneracyError(SelmutError, ArithmeticError):
    exit_code = 5


class DomainError(SelmutError, ValueError):
    """A trait or intake value outside the region where the model is viable."""

    exit_code = 6
