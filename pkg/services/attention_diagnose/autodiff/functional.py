from typing import Optional

import numpy as np

from ..commons.errors import ShapeMismatchError
from .tensor import Take, Tensor


def embedding(table: Tensor, indices: np.ndarray) -> Tensor:
    """Look up rows of an embedding table; output shape is indices.shape + (dim,)."""
    return Take.apply(table, indices=np.asarray(indices, dtype=np.int64))


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    out = x @ weight
    return out if bias is None else out + bias


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Softmax along `axis`, composed of exp, sum and divide.

    The max shift is a constant: softmax is shift invariant, so the derivatives
    of every order are unchanged."""
    shift = Tensor(np.max(x.data, axis=axis, keepdims=True))
    e = (x - shift).exp()
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x - Tensor(np.max(x.data, axis=axis, keepdims=True))
    return shifted - shifted.exp().sum(axis=axis, keepdims=True).log()


def one_hot(labels: np.ndarray, classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ShapeMismatchError(f"Labels must lie in [0, {classes}).")
    out = np.zeros((labels.shape[0], classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def cross_entropy_with_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of (batch, classes) logits against integer labels."""
    if logits.ndim != 2 or logits.shape[0] != len(labels):
        raise ShapeMismatchError(f"Logits of shape {logits.shape} do not match {len(labels)} labels.")
    picked = (log_softmax(logits) * Tensor(one_hot(labels, logits.shape[1]))).sum()
    return picked * (-1.0 / logits.shape[0])
