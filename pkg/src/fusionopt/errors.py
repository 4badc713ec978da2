"""Exception hierarchy shared by every fusionopt module."""


class FusionError(Exception):
    """Base class for all fusionopt errors."""


class NotPositiveDefinite(FusionError, ValueError):
    def __init__(self, message="matrix is not positive definite", pivot=None):
        self.pivot = pivot
        if pivot is not None:
            message = f"{message} (pivot index {pivot})"
        super().__init__(message)


class NoConvergence(FusionError, ArithmeticError):
    pass


class SingularUpdate(FusionError, ArithmeticError):
    pass


class DegenerateSpectrum(FusionError, ValueError):
    pass


class BadDimensions(FusionError, ValueError):
    pass


class BadBudget(FusionError, ValueError):
    pass


class ParseError(FusionError, ValueError):
    pass


class DimensionMismatch(FusionError, ValueError):
    pass


class InfeasibleFixing(FusionError, ValueError):
    pass


class InsufficientSupport(FusionError, ValueError):
    pass


class BadInit(FusionError, ValueError):
    pass


class Contradiction(FusionError, RuntimeError):
    pass


class TooLarge(FusionError, ValueError):
    pass
