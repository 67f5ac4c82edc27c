"""Exception types shared across the package."""


class CoverageError(Exception):
    """Base class for every error raised by drqn_cover."""


# map parsing / validation
class MapFormatError(CoverageError, ValueError):
    pass


class NonRectangularError(MapFormatError):
    pass


class UnknownCellError(MapFormatError):
    pass


class NoStartError(MapFormatError):
    pass


class StartNotChargingError(MapFormatError):
    pass


class MultipleStartsError(MapFormatError):
    pass


# environment
class MaskedActionError(CoverageError, ValueError):
    pass


class SteppedAfterDoneError(CoverageError, RuntimeError):
    pass


# numerics
class ShapeMismatchError(CoverageError, ValueError):
    pass


class ToleranceExceeded(CoverageError, AssertionError):
    pass


class AllMaskedError(CoverageError, ValueError):
    pass


# replay
class InsufficientSamplesError(CoverageError, ValueError):
    pass


class IndexOutOfRangeError(CoverageError, IndexError):
    pass


# oracle
class InstanceTooLargeError(CoverageError, ValueError):
    pass


# persistence / cli
class ChecksumMismatchError(CoverageError, ValueError):
    pass


class VariantMismatchError(CoverageError, ValueError):
    pass


class GenerationFailedError(CoverageError, RuntimeError):
    pass


class SchemaMismatchError(CoverageError, ValueError):
    pass


class ConfigError(CoverageError, ValueError):
    pass
