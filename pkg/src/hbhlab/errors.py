"""Exception types raised across the package."""


class HBHError(Exception):
    """Base class for all package errors."""


class InvalidParticleCount(HBHError, ValueError):
    pass


class InvalidState(HBHError, ValueError):
    pass


class SiteOutOfRange(HBHError, IndexError):
    pass


class BasisMismatch(HBHError, ValueError):
    pass


class ConvergenceFailure(HBHError, RuntimeError):
    """Eigensolver did not reach the requested residual.

    The best residual reached is stored on ``residual``.
    """

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class NormalizationError(HBHError, ValueError):
    pass


class EmptyTruncation(HBHError, ValueError):
    pass


class NumericOverflow(HBHError, FloatingPointError):
    def __init__(self, message, state_index=None):
        super().__init__(message)
        self.state_index = state_index


class UndefinedPhase(HBHError, ValueError):
    pass


class UndefinedFilling(HBHError, ValueError):
    pass


class IllConditionedBatch(HBHError, ValueError):
    pass


class DegenerateSample(HBHError, ValueError):
    pass
