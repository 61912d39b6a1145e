"""Exception types raised across the package."""


class ChanPredError(Exception):
    """Base class for all errors raised by chanpred."""


class ShapeMismatch(ChanPredError, ValueError):
    pass


class BadShape(ShapeMismatch):
    pass


class NotHermitian(ChanPredError, ValueError):
    pass


class Singular(ChanPredError, ArithmeticError):
    pass


class SizeOverflow(ChanPredError, MemoryError):
    pass


class EigenFailure(ChanPredError, ArithmeticError):
    pass


class InvalidScenario(ChanPredError, ValueError):
    pass


class ZeroVector(ChanPredError, ValueError):
    pass


class ZeroTruth(ZeroVector):
    pass


class NonSeparable(ChanPredError, ValueError):
    """Adjacent speed classes produce overlapping SATC distributions."""


class TooFewSamples(ChanPredError, ValueError):
    pass


class IllConditioned(ChanPredError, ArithmeticError):
    pass


class UnstableModel(ChanPredError, ValueError):
    pass


class DivergedLoss(ChanPredError, ArithmeticError):
    pass


class RankDeficient(ChanPredError, ArithmeticError):
    pass


class FormatError(ChanPredError, ValueError):
    """A binary or key=value file does not match the expected layout."""


class ExperimentError(ChanPredError, RuntimeError):
    """A method failed inside an experiment; ``partial`` holds the rows computed so far."""

    def __init__(self, message, method=None, partial=None):
        super().__init__(message)
        self.method = method
        self.partial = partial
