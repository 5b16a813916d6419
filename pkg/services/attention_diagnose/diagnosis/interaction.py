from typing import List, Optional, Sequence, Tuple

from models.reports import Coupling, InteractionReport

from ..autodiff.graph import Batch
from ..base.base_models import DiagnosableModel
from ..spectral.interaction import InteractionMatrix, interaction_matrix
from ..spectral.operators import IndexSet


def rank_couplings(matrix: InteractionMatrix) -> List[Coupling]:
    """Cross-group pairs by decreasing |normalized| value; ties keep (i, j) order."""
    pairs = [(i, j) for i in range(len(matrix.labels)) for j in range(i + 1, len(matrix.labels))
             if matrix.groups[i] != matrix.groups[j]]
    pairs.sort(key=lambda ij: -abs(matrix.normalized[ij]))
    return [Coupling(a=matrix.labels[i], b=matrix.labels[j], raw=float(matrix.raw[i, j]),
                     normalized=float(matrix.normalized[i, j])) for i, j in pairs]


def interaction_report(model: DiagnosableModel, batch: Batch, selection: Sequence[IndexSet],
                       labels: Optional[Sequence[str]] = None, groups: Optional[Sequence[str]] = None,
                       mode: str = "normalized", diagnostic_batch: str = "",
                       selection_method: str = "explicit") -> Tuple[InteractionMatrix, InteractionReport]:
    """Interaction matrix plus the ranked cross-group couplings; `top` is the strongest one.

    Returns:
        Tuple[InteractionMatrix, InteractionReport]: In-memory matrix and its serializable report."""
    matrix = interaction_matrix(model, batch, selection, labels, groups, mode,
                                selection_method=selection_method)
    couplings = rank_couplings(matrix)
    report = InteractionReport(diagnostic_batch=diagnostic_batch, matrix=matrix.to_model(),
                               couplings=couplings, top=couplings[0] if couplings else None)
    return matrix, report
