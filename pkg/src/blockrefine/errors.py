"""Exception hierarchy shared by all modules."""


class BlockRefineError(Exception):
    """Base class for every error raised by this package."""


class NumericalError(BlockRefineError):
    """Numerical failure (non-finite values, degenerate inputs). CLI exit code 3."""


class ConfigError(BlockRefineError):
    """Invalid configuration. CLI exit code 2."""


class ZeroRow(NumericalError):
    pass


class DimMismatch(BlockRefineError, ValueError):
    pass


class ShapeMismatch(BlockRefineError, ValueError):
    pass


class EmptyInput(BlockRefineError, ValueError):
    pass


class NonFinite(NumericalError):
    pass


class NotNormalized(BlockRefineError, ValueError):
    pass


class QueueTooSmall(BlockRefineError, ValueError):
    pass


class UnlabeledQueue(BlockRefineError, ValueError):
    pass


class BadTemperature(BlockRefineError, ValueError):
    pass


class MaskDiagonal(BlockRefineError, ValueError):
    pass


class BatchTooSmall(BlockRefineError, ValueError):
    pass


class StaleCache(BlockRefineError, ValueError):
    pass


class BadProgress(BlockRefineError, ValueError):
    pass


class DegenerateMask(BlockRefineError, ValueError):
    pass


class TooShort(BlockRefineError, ValueError):
    pass


class BadIndex(BlockRefineError, ValueError):
    pass


class NonFiniteLoss(NumericalError):
    pass


class TooFewNeighbors(BlockRefineError, ValueError):
    pass


class MissingClass(BlockRefineError, ValueError):
    pass


class ClassTooSmall(BlockRefineError, ValueError):
    pass


class EmptyTest(BlockRefineError, ValueError):
    pass


class TooFewRows(BlockRefineError, ValueError):
    pass


class LengthMismatch(BlockRefineError, ValueError):
    pass


class SingleCluster(BlockRefineError, ValueError):
    pass


class BadMagic(BlockRefineError, ValueError):
    pass


class Truncated(BlockRefineError, ValueError):
    pass


class VersionUnsupported(BlockRefineError, ValueError):
    pass


class StageError(BlockRefineError):
    """Wraps an exception raised inside a pipeline stage, carrying the stage name."""

    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
