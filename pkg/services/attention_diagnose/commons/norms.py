from typing import Union

import numpy as np
from numba import njit


@njit(cache=True)
def restricted_norm(values: np.ndarray, indices: np.ndarray) -> float:
    """Compute the Euclidean norm of values restricted to indices.

    Args:
        values (np.ndarray): Flat vector.
        indices (np.ndarray): Int64 coordinates to keep.

    Returns:
        float: sqrt of the sum of squared selected entries."""
    total = 0.0
    for i in indices:
        total += values[i] * values[i]
    return np.sqrt(total)


def gradient_norm(grad: np.ndarray, indices: Union[np.ndarray, list]) -> float:
    """Norm of a gradient restricted to a parameter index set.

    Args:
        grad (np.ndarray): Flat gradient.
        indices (Union[np.ndarray, list]): Parameter coordinates; empty gives 0.

    Returns:
        float: Euclidean norm of grad[indices]."""
    idx = np.asarray(indices, dtype=np.int64).ravel()
    if idx.size == 0:
        return 0.0
    if idx.min() < 0 or idx.max() >= grad.shape[0]:
        raise IndexError(f"Indices must lie in [0, {grad.shape[0]}).")
    return float(restricted_norm(np.ascontiguousarray(grad, dtype=np.float64), idx))


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    """max |a - b| / max(|b|, floor) over all entries."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(float(np.max(np.abs(b))) if b.size else 0.0, floor))
