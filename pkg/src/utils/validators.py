"""Data validation utilities for point clouds and flow fields"""

from typing import Optional, Sequence, Union

import numpy as np

from src.utils.error_handler import DataValidationError, LengthMismatch

NO_LABEL = -1


def as_points(values, name: str = "points") -> np.ndarray:
    """Coerce to a finite float64 (n, 3) array"""
    try:
        array = np.asarray(values, dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise DataValidationError(f"{name}: not numeric ({e})") from e

    if array.size == 0:
        return np.zeros((0, 3), dtype=np.float64)
    if array.ndim == 1 and array.shape[0] == 3:
        array = array.reshape(1, 3)
    if array.ndim != 2 or array.shape[1] != 3:
        raise DataValidationError(f"{name}: expected shape (n, 3), got {array.shape}")
    if not np.all(np.isfinite(array)):
        raise DataValidationError(f"{name}: contains NaN or infinity")
    return array


def as_vector3(values, name: str = "vector") -> np.ndarray:
    array = np.asarray(values, dtype=np.float64).reshape(-1)
    if array.shape != (3,):
        raise DataValidationError(f"{name}: expected a 3-vector, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise DataValidationError(f"{name}: contains NaN or infinity")
    return array


def as_labels(values, count: int, name: str = "labels") -> Optional[np.ndarray]:
    """Per-point entity ids; NO_LABEL marks 'none'"""
    if values is None:
        return None
    array = np.asarray(values)
    if array.size == 0 and count == 0:
        return np.zeros(0, dtype=np.int64)
    if not np.issubdtype(array.dtype, np.integer):
        raise DataValidationError(f"{name}: expected integers, got {array.dtype}")
    array = array.astype(np.int64).reshape(-1)
    if array.shape[0] != count:
        raise LengthMismatch(f"{name}: {array.shape[0]} labels for {count} points")
    if np.any(array < NO_LABEL):
        raise DataValidationError(f"{name}: negative entity id other than 'none'")
    return array


def require_same_length(*arrays: Union[np.ndarray, Sequence], names: Sequence[str] = ()) -> int:
    lengths = [len(a) for a in arrays]
    if len(set(lengths)) > 1:
        label = ", ".join(f"{n}={l}" for n, l in zip(names, lengths)) if names else str(lengths)
        raise LengthMismatch(f"Length mismatch: {label}")
    return lengths[0] if lengths else 0


def readonly(array: np.ndarray) -> np.ndarray:
    """Freeze an array in place and return it"""
    array.setflags(write=False)
    return array
