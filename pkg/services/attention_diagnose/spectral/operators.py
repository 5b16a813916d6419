from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from ..autodiff.graph import Batch, HessianOperator
from ..base.base_models import DiagnosableModel
from ..commons.errors import NonFiniteError, ShapeMismatchError
from ..commons.rng import derive_rng

IndexSet = Union[np.ndarray, Sequence[int]]


@dataclass(frozen=True)
class HvpClosure:
    """Symmetric linear operator of dimension `dim`, given by its matvec."""
    dim: int
    matvec: Callable[[np.ndarray], np.ndarray]

    def __call__(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.dim,):
            raise ShapeMismatchError(f"Operator of dimension {self.dim} applied to shape {v.shape}.")
        out = np.asarray(self.matvec(v), dtype=np.float64)
        if not np.all(np.isfinite(out)):
            raise NonFiniteError("operator", None, "The operator returned non-finite values.")
        return out

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "HvpClosure":
        m = np.asarray(matrix, dtype=np.float64)
        return cls(m.shape[0], lambda v: m @ v)


def asymmetry(op: HvpClosure, seed: int = 0, trials: int = 4) -> float:
    """Largest relative gap |⟨Au, v⟩ − ⟨u, Av⟩| over random pairs (a probabilistic symmetry check)."""
    worst = 0.0
    for t in range(trials):
        rng = derive_rng(seed, t)
        u, v = rng.standard_normal(op.dim), rng.standard_normal(op.dim)
        a, b = float(op(u) @ v), float(u @ op(v))
        worst = max(worst, abs(a - b) / max(abs(a), abs(b), 1e-300))
    return worst


def check_indices(group: IndexSet, dim: int) -> np.ndarray:
    idx = np.asarray(group, dtype=np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= dim):
        raise IndexError(f"Group indices must lie in [0, {dim}).")
    return idx


def full_hvp(model: DiagnosableModel, batch: Batch,
             operator: Optional[HessianOperator] = None) -> HvpClosure:
    """HVP closure over every parameter of the model."""
    operator = operator or HessianOperator(model.graph, model.params, batch)
    return HvpClosure(model.dim, operator)


def group_restricted_hvp(model: DiagnosableModel, batch: Batch, group: IndexSet,
                         operator: Optional[HessianOperator] = None) -> HvpClosure:
    """Closure computing P·H·Pᵀ·v for the coordinates in `group`.

    Args:
        model (DiagnosableModel): Model whose Hessian is taken at its parameters.
        batch (Batch): Diagnostic batch.
        group (IndexSet): Nonempty parameter indices.
        operator (Optional[HessianOperator]): Reusable operator at the same point.

    Returns:
        HvpClosure: Operator of dimension len(group)."""
    idx = check_indices(group, model.dim)
    if idx.size == 0:
        raise ValueError("group_restricted_hvp needs a nonempty group.")
    operator = operator or HessianOperator(model.graph, model.params, batch)

    def matvec(v: np.ndarray) -> np.ndarray:
        full = np.zeros(model.dim)
        full[idx] = v
        return operator(full)[idx]

    return HvpClosure(int(idx.size), matvec)
