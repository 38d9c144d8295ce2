"""Exception types shared across the package."""


class GendsError(Exception):
    """Base class for all package errors."""


class ParseError(GendsError):
    """A data file line could not be parsed.

    Carries the offending path and 1-based line number.
    """

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class ValidationError(GendsError):
    """Input data violates a structural invariant (e.g. unknown entity id)."""


class ConfigError(GendsError):
    """Bad configuration value or unknown model variant."""


class CheckpointError(GendsError):
    """Checkpoint file is unreadable, truncated, or incompatible."""


class TrainingDivergedError(GendsError):
    """Loss became non-finite during training."""


class AlignmentError(GendsError):
    """A gold response entity could not be aligned to any candidate."""
