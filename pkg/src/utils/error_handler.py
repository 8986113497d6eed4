"""Error types and handling for the scene-flow adaptation toolkit"""

import sys
from collections import Counter
from functools import wraps
from typing import Any, Callable, Dict, Optional

from src.utils.logger_setup import setup_logger

logger = setup_logger(__name__)


class SceneFlowError(Exception):
    """Base exception for the toolkit"""
    pass


class ConfigurationError(SceneFlowError):
    """Configuration related errors"""
    pass


class DataValidationError(SceneFlowError):
    """Malformed arrays or documents"""
    pass


class EmptyCloud(DataValidationError):
    """An operation needs at least one point"""
    pass


class EmptyNeighborhood(DataValidationError):
    """A neighborhood query has no admissible neighbor"""
    pass


class LengthMismatch(DataValidationError):
    """Index-aligned arrays differ in length"""
    pass


class EmptyInput(DataValidationError):
    """Evaluation on zero points"""
    pass


class MissingLabels(DataValidationError):
    """Entity labels required but absent"""
    pass


class ShapeMismatch(DataValidationError):
    """Parameter sets are not shape-compatible"""
    pass


class InvalidScript(DataValidationError):
    """A scene script failed validation"""
    pass


class ContainerFormatError(DataValidationError):
    """Binary container is truncated or inconsistent"""
    pass


class DegenerateCluster(SceneFlowError):
    """Rigid motion is not identifiable from the given points"""
    def __init__(self, message: str, size: int = 0):
        self.size = size
        super().__init__(message)


class NonFiniteLoss(SceneFlowError):
    """A loss or gradient overflowed"""
    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


def handle_errors(func: Callable) -> Callable:
    """Decorator wrapping unexpected exceptions into SceneFlowError"""
    @wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except SceneFlowError:
            raise  # Re-raise our own errors
        except Exception as e:
            logger.error(f"Unexpected error in {func.__name__}: {str(e)}", exc_info=True)
            raise SceneFlowError(f"Unexpected error: {str(e)}") from e
    return wrapper


class DiagnosticTally:
    """Counts absorbed degeneracies by kind"""

    def __init__(self):
        self.counts: Counter = Counter()

    def record(self, kind: str, amount: int = 1):
        if amount <= 0:
            return
        self.counts[kind] += amount
        logger.debug(f"Diagnostic recorded: {kind} (count: {self.counts[kind]})")

    def merge(self, other: "DiagnosticTally") -> "DiagnosticTally":
        self.counts.update(other.counts)
        return self

    def get(self, kind: str) -> int:
        return self.counts.get(kind, 0)

    def as_dict(self) -> Dict[str, int]:
        return dict(sorted(self.counts.items()))


def setup_global_error_handler():
    """Log uncaught exceptions before the interpreter exits"""
    def handle_exception(exc_type, exc_value, exc_traceback):
        if issubclass(exc_type, KeyboardInterrupt):
            sys.__excepthook__(exc_type, exc_value, exc_traceback)
            return

        logger.critical(
            "Uncaught exception",
            exc_info=(exc_type, exc_value, exc_traceback)
        )

    sys.excepthook = handle_exception
