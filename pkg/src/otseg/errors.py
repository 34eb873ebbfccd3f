"""Exception hierarchy shared across the package.

The CLI maps these onto its exit-code contract: validation problems exit
with 2, file problems (missing, unreadable, corrupt) with 3.
"""


class OtsegError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(OtsegError):
    """Input violates a documented precondition or invariant."""


class DimensionError(ValidationError):
    """Array shapes or channel counts do not line up."""


class InputError(ValidationError):
    """Numeric input is unusable (non-finite entries, bad weights)."""


class SizeError(ValidationError):
    """Requested size is outside what the operation supports."""


class EmptySetError(ValidationError):
    """An operation received or produced an empty pixel collection."""


class UndefinedCorrelationError(ValidationError):
    """Correlation is undefined (constant input vector)."""


class FormatError(OtsegError):
    """A file on disk is not a well-formed task export."""


class NumericalError(OtsegError):
    """The dense solver over- or underflowed; retry with log_domain=True."""


class RunError(OtsegError):
    """An evaluation run produced no usable results."""


class ConvergenceWarning(UserWarning):
    """Solver stopped at the iteration cap before reaching tolerance."""
