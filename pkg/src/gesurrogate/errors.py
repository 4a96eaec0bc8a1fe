"""Exception hierarchy shared across the package."""


class SurrogateError(Exception):
    """Base class for all package errors."""


class InvalidInputError(SurrogateError, ValueError):
    pass


class EnumerationRefusedError(SurrogateError):
    """Lattice too large for exhaustive enumeration."""


class UnsupportedRegimeError(SurrogateError):
    pass


class IllConditionedError(SurrogateError):
    """Covariance factorization failed even after maximum jitter."""


class FitFailedError(SurrogateError):
    def __init__(self, message, hyperparameters=None):
        super().__init__(message)
        self.hyperparameters = hyperparameters


class DegeneratePosteriorError(SurrogateError):
    pass
