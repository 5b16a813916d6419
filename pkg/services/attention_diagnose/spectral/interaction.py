import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..autodiff.graph import Batch, HessianOperator
from ..base.base_models import DiagnosableModel
from ..commons.constants import COUPLING_EPS, DENSE_GUARD
from ..commons.errors import DimensionGuardError, OverlappingSelectionError
from .dense import dense_hessian
from .operators import IndexSet, check_indices, group_restricted_hvp

logger = logging.getLogger(__name__)


@dataclass
class InteractionMatrix:
    """k×k couplings between selected parameters or groups.

    `raw[i][j]` is the signed largest-magnitude Hessian entry between
    selection i and j; `normalized` divides by √(|raw_ii|·|raw_jj|) and has
    NaN on its diagonal."""
    labels: List[str]
    groups: List[str]
    indices: List[np.ndarray]
    raw: np.ndarray
    normalized: np.ndarray
    mode: str = "normalized"
    selection_method: str = "explicit"

    @property
    def values(self) -> np.ndarray:
        return self.normalized if self.mode == "normalized" else self.raw

    def to_model(self):
        from models.reports import InteractionMatrixModel

        def nullable(row):
            return [None if np.isnan(x) else float(x) for x in row]

        return InteractionMatrixModel(
            labels=self.labels, groups=self.groups, indices=[i.tolist() for i in self.indices],
            raw=self.raw.tolist(), normalized=[nullable(r) for r in self.normalized],
            mode=self.mode, selection_method=self.selection_method,
        )


def _signed_peak(block: np.ndarray) -> float:
    flat = block.ravel()
    return float(flat[int(np.argmax(np.abs(flat)))])


def normalize_couplings(raw: np.ndarray, eps: float = COUPLING_EPS) -> np.ndarray:
    diag = np.abs(np.diag(raw))
    out = raw / np.sqrt(np.outer(diag, diag) + eps)
    out = np.clip(out, -1.0, 1.0)
    np.fill_diagonal(out, np.nan)
    return out


def interaction_matrix(model: DiagnosableModel, batch: Batch, selection: Sequence[IndexSet],
                       labels: Optional[Sequence[str]] = None, groups: Optional[Sequence[str]] = None,
                       mode: str = "normalized", operator: Optional[HessianOperator] = None,
                       selection_method: str = "explicit", guard: int = DENSE_GUARD) -> InteractionMatrix:
    """Dense coupling matrix over disjoint index sets.

    Args:
        model (DiagnosableModel): Model at its current parameters.
        batch (Batch): Diagnostic batch.
        selection (Sequence[IndexSet]): Disjoint, nonempty index sets.
        labels (Optional[Sequence[str]]): Entry names. Defaults to "s0", "s1", ...
        groups (Optional[Sequence[str]]): Owning group of each entry. Defaults to registry tags.
        mode (str, optional): "raw" or "normalized". Defaults to "normalized".
        operator (Optional[HessianOperator]): Reusable operator at the same point.
        selection_method (str, optional): Recorded provenance of the selection.
        guard (int, optional): Largest union size. Defaults to DENSE_GUARD.

    Returns:
        InteractionMatrix: raw and normalized couplings."""
    if mode not in ("raw", "normalized"):
        raise ValueError(f"Unknown interaction mode '{mode}'.")
    sets = [check_indices(s, model.dim) for s in selection]
    if not sets or any(s.size == 0 for s in sets):
        raise ValueError("Interaction selection needs nonempty index sets.")
    union = np.concatenate(sets)
    if np.unique(union).size != union.size:
        raise OverlappingSelectionError("Selected index sets overlap.")
    if union.size > guard:
        raise DimensionGuardError(f"Selection of {union.size} parameters exceeds the guard of {guard}.")

    hessian = dense_hessian(group_restricted_hvp(model, batch, union, operator), guard).matrix
    bounds = np.concatenate([[0], np.cumsum([s.size for s in sets])])
    k = len(sets)
    raw = np.empty((k, k))
    for i in range(k):
        for j in range(k):
            raw[i, j] = _signed_peak(hessian[bounds[i]:bounds[i + 1], bounds[j]:bounds[j + 1]])
    raw = 0.5 * (raw + raw.T)

    labels = list(labels) if labels is not None else [f"s{i}" for i in range(k)]
    if groups is None:
        groups = [model.registry.tag_of(int(s[0])) for s in sets]
    return InteractionMatrix(labels, list(groups), sets, raw, normalize_couplings(raw), mode, selection_method)


def default_selection(model: DiagnosableModel, batch: Batch, groups: Sequence[str], per_group: int = 2,
                      operator: Optional[HessianOperator] = None,
                      guard: int = DENSE_GUARD) -> Tuple[List[np.ndarray], List[str], List[str]]:
    """Pick the `per_group` parameters of largest |H_ii| in every group.

    Ties go to the lower index; the chosen parameters keep that rank order.

    Returns:
        Tuple[List[np.ndarray], List[str], List[str]]: Singleton index sets, labels and owning groups."""
    operator = operator or HessianOperator(model.graph, model.params, batch)
    selection, labels, owners = [], [], []
    for name in model.registry.require(groups):
        idx = model.registry.indices(name)
        diag = np.diag(dense_hessian(group_restricted_hvp(model, batch, idx, operator), guard).matrix)
        order = np.argsort(-np.abs(diag), kind="stable")[:per_group]
        for local in order:
            selection.append(idx[[local]])
            labels.append(f"{name}[{int(local)}]")
            owners.append(name)
    logger.debug("default selection picked %d parameters from %d groups", len(selection), len(groups))
    return selection, labels, owners
