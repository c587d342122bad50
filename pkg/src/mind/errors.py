"""Exception types shared across the package."""


class MindError(Exception):
    """Base class for all package errors."""


class FormatError(MindError, ValueError):
    """A file header or payload does not follow the expected format."""


class SizeMismatchError(FormatError):
    """A payload is shorter or longer than its header declares."""


class DimensionError(MindError, ValueError):
    """Array shapes are incompatible with an operation."""


class ParameterError(MindError, ValueError):
    """A numeric parameter is outside its valid domain."""


class ConfigError(MindError, ValueError):
    """A run configuration is invalid or requests a disabled feature."""


class DatasetError(MindError, RuntimeError):
    """A dataset directory is missing or empty."""


class TrainingError(MindError, RuntimeError):
    """Training diverged; carries the step index and last loss report."""

    def __init__(self, message, step=None, report=None):
        super().__init__(message)
        self.step = step
        self.report = report
