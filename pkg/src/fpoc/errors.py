"""Exception types raised across the package."""


class FpocError(Exception):
    """Base class for all package errors."""


class MapError(FpocError, ValueError):
    """A grid map could not be parsed."""


class NonRectangularError(MapError):
    pass


class UnknownCharacterError(MapError):
    pass


class NoEmptyCellsError(MapError):
    pass


class UnenclosedBoundaryError(MapError):
    pass


class NoGoalsForModeError(MapError):
    pass


class UnsupportedGridError(FpocError, ValueError):
    pass


class IndexOutOfRangeError(FpocError, IndexError):
    pass


class DegenerateDistributionError(FpocError, ValueError):
    pass


class EmptyInitiationSetError(FpocError, ValueError):
    pass


class PowerSetTooLargeError(FpocError, ValueError):
    pass


class SingularSystemError(FpocError, ArithmeticError):
    pass


class NonConvergentError(FpocError, RuntimeError):
    pass


class ConfigError(FpocError, ValueError):
    pass
