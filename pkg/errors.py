"""
Exception hierarchy for sagechain.
Every error names the offending column, value or shape; the CLI maps each
class to a process exit code.
"""
from typing import Any, Dict, Optional


EXIT_OK = 0
EXIT_INPUT_ERROR = 2
EXIT_TRAINING_FAILURE = 3


class SageChainError(Exception):
    """Base class for all sagechain errors."""
    exit_code = EXIT_INPUT_ERROR


class SchemaError(SageChainError):
    """Missing required column, unknown dataset or unknown task."""


class EncodingError(SageChainError):
    """A categorical cell or target value is not a declared level."""

    def __init__(self, column: str, value: Any):
        self.column = column
        self.value = value
        super().__init__(f"Undeclared level {value!r} in column '{column}'")


class ConfigError(SageChainError):
    """Invalid or unknown configuration key or value."""


class DataError(SageChainError):
    """A data-shaped precondition failed (balancing, windowing, folds, labels)."""


class DimensionError(SageChainError):
    """Tensor or layer shape mismatch."""
    exit_code = EXIT_TRAINING_FAILURE

    def __init__(self, message: str, *shapes: Any):
        if shapes:
            message = f"{message}: " + " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(message)


class TrainingAborted(SageChainError):
    """Non-finite loss during training; carries fold/epoch context and a diagnostic dump."""
    exit_code = EXIT_TRAINING_FAILURE

    def __init__(self, message: str, fold: Optional[int] = None, epoch: Optional[int] = None,
                 diagnostics: Optional[Dict[str, Any]] = None):
        self.fold = fold
        self.epoch = epoch
        self.diagnostics = diagnostics or {}
        super().__init__(f"{message} (fold={fold}, epoch={epoch})")


class ReportError(SageChainError):
    """Malformed report.json or a report with nothing to render."""
