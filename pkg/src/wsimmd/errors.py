"""Exception hierarchy.  The CLI maps each family onto an exit code."""


class WsimmdError(Exception):
    """Base class for all package errors."""


class ValidationError(WsimmdError, ValueError):
    """Input violates a documented invariant."""


class FormatError(ValidationError):
    """A file does not match its on-disk format."""


class DegenerateDataError(ValidationError):
    """The dataset cannot support the requested computation."""


class UnfittableError(ValidationError):
    """A model has nothing to learn from (e.g. no comparable pairs)."""


class NumericalError(WsimmdError, ArithmeticError):
    """Numerical failure: non-convergence, non-PSD kernel beyond repair."""
