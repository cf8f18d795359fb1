"""Exception hierarchy shared by every fairot module.

The CLI maps :class:`InvalidInput` to exit code 2 and :class:`NumericFailure`
to exit code 3.
"""


class FairOTError(Exception):
    """Base class for all fairot errors."""


class InvalidInput(FairOTError, ValueError):
    """Inputs violate a documented precondition."""


class InstanceTooLarge(InvalidInput):
    """An exact oracle was asked to solve an instance above its size cap."""


class SupportMismatch(InvalidInput):
    """The two sensitive groups do not share the same legitimate-level support."""

    def __init__(self, message, only_in_0=(), only_in_1=()):
        super().__init__(message)
        self.only_in_0 = tuple(only_in_0)
        self.only_in_1 = tuple(only_in_1)


class UndefinedGap(InvalidInput):
    """Fewer than two distinct level coordinates; the minimum level gap is undefined.

    Any positive level-mismatch penalty then works.
    """


class DegenerateCondition(InvalidInput):
    """A conditional probability or ratio needed by a formula is undefined."""


class SchemaError(InvalidInput):
    """A dataset schema does not match the file it describes."""


class NumericFailure(FairOTError, ArithmeticError):
    """NaN or overflow detected inside a numerical routine."""


class NotConverged(FairOTError):
    """An operation needs a converged transport plan but received one that is not."""


class TrainingDiverged(NumericFailure):
    """Training produced a non-finite loss or parameter."""


class ConvergenceWarning(RuntimeWarning):
    """An iterative solver stopped at its iteration cap before reaching tolerance."""
