"""Exception hierarchy shared by every kdop module."""


class KdopError(Exception):
    """Base class for all package errors."""


class DimensionError(KdopError, ValueError):
    pass


class DomainError(KdopError, ValueError):
    pass


class ConfigError(KdopError, ValueError):
    pass


class DataError(KdopError):
    """Problems with input data (parsing, empty cohorts, never-observed features)."""


class ParseError(DataError):
    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class EmptyCohortError(DataError):
    pass


class StratificationError(DataError):
    pass


class TrainingError(KdopError):
    pass


class DivergenceError(TrainingError):
    def __init__(self, epoch, loss):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}")


class InputContractError(KdopError, ValueError):
    pass


class ThresholdError(KdopError, ValueError):
    pass


class UndefinedMetricError(KdopError, ValueError):
    pass


class LeakageError(KdopError, AssertionError):
    """A provenance guard found data from the wrong fold in a fitting step."""


class StageError(KdopError):
    """Wraps an error raised inside one stage of a fold run."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
