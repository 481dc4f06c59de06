"""Exception types shared across the package."""


class DataError(ValueError):
    """Input data violates a dataset or study invariant."""


class NumericalError(RuntimeError):
    """A numerical routine could not produce a result within tolerance."""


class ConvergenceError(NumericalError):
    """An iterative estimator hit its iteration cap.

    The last iterate is kept on ``last_iterate`` so callers can inspect it.
    """

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate
