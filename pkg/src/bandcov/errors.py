"""Exception hierarchy shared across the package.

Argument and configuration mistakes raise plain ``ValueError``; the classes
here mark numeric failures that callers may want to catch and map to a
distinct exit status.
"""


class BandcovError(Exception):
    """Base class for numeric and state errors raised by this package."""


class NumericError(BandcovError):
    """Non-finite input, singular system, or other numeric breakdown."""


class NotPositiveDefiniteError(NumericError):
    """A matrix required to be positive definite is not."""


class ConvergenceError(NumericError):
    """An iterative solver hit its iteration cap.

    Carries the final residual so callers can decide whether the partial
    answer is usable.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DegenerateWeightsError(NumericError):
    """All importance weights for one observation underflowed.

    ``observation`` is the index of the offending leave-one-out term.
    """

    def __init__(self, message, observation=None):
        super().__init__(message)
        self.observation = observation


class FoldFailureError(BandcovError):
    """An estimator failed on one leave-one-out fold (index in ``fold``)."""

    def __init__(self, message, fold=None):
        super().__init__(message)
        self.fold = fold


class InvalidStateError(BandcovError):
    """Operation applied to an object in the wrong state."""
