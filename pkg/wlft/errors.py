"""
Error types for wlft.

Every error carries the process exit code the CLI reports for it, the same way
an HTTP exception carries its status code. Library code raises; only main.py
turns these into exit codes.
"""

from typing import List, Optional, Tuple


class WltError(Exception):
    """Base class for all wlft errors."""

    exit_code: int = 1

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class ConfigError(WltError):
    """Invalid run configuration (unknown key, bad value, level rule violation)."""

    exit_code = 2


class ShapeError(WltError, ValueError):
    """Tensor shapes or operator arguments do not satisfy an operation's contract."""

    exit_code = 2


class DataError(WltError):
    """Unreadable image, invalid manifest or empty split."""

    exit_code = 3


class CheckpointError(WltError):
    """Checkpoint cannot be written, read, or does not match the model."""

    exit_code = 3

    def __init__(self, message: str, mismatches: Optional[List[str]] = None):
        super().__init__(message)
        self.mismatches = mismatches or []


class MetricError(WltError):
    """Metric undefined for the given inputs (empty matrix, single-class ROC)."""

    exit_code = 3


class NumericalError(WltError):
    """A forward value or training loss became NaN/Inf."""

    exit_code = 4

    def __init__(self, message: str, batch_index: Optional[int] = None):
        if batch_index is not None:
            message = f"{message} (batch {batch_index})"
        super().__init__(message)
        self.batch_index = batch_index


class GradCheckError(WltError):
    """Analytic gradients disagree with finite differences."""

    exit_code = 5

    def __init__(self, message: str, offenders: Optional[List[Tuple[str, float]]] = None):
        super().__init__(message)
        self.offenders = offenders or []
