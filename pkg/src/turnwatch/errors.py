"""Error taxonomy shared across the pipeline."""


class TurnwatchError(Exception):
    """Base class for all package errors."""


class ConfigurationError(TurnwatchError):
    """Invalid or inconsistent configuration values."""


class BoundsError(TurnwatchError, IndexError):
    """Index outside the valid range (e.g. frame step out of a sequence)."""


class DimensionError(TurnwatchError):
    """Tensor shapes do not line up with the configured geometry."""


class DataError(TurnwatchError):
    """Dataset-level problem: empty class, missing artifacts, length mismatch."""


class SequenceTooLongError(DataError):
    """Sequence exceeds the fixed padded length and must be discarded."""


class NumericError(TurnwatchError):
    """Non-finite or out-of-range numeric values where finite ones are required."""


class TrainingError(TurnwatchError):
    """Training diverged or could not proceed."""

    def __init__(self, message, state_dump=None):
        super().__init__(message)
        self.state_dump = state_dump
