import logging
from typing import Optional, Sequence, Tuple

from models.config import InterventionConfig, OptimizerConfig
from models.reports import InterventionReport

from ..autodiff.graph import Batch
from ..base.base_models import DiagnosableModel
from ..commons.errors import DivergenceError, InvalidConfigError
from ..harness.perturbation import perturb, prediction_variability
from ..loaders.dataset_loader import Dataset
from ..spectral.interaction import InteractionMatrix, interaction_matrix
from ..spectral.operators import IndexSet
from ..training.trainer import train
from .interaction import rank_couplings

logger = logging.getLogger(__name__)


def _coupling(matrix: InteractionMatrix, pair: Tuple[str, str]) -> float:
    unknown = [p for p in pair if p not in matrix.labels]
    if unknown:
        raise InvalidConfigError(f"Tracked pair entries {unknown} are not in the selection {matrix.labels}.")
    return float(matrix.normalized[matrix.labels.index(pair[0]), matrix.labels.index(pair[1])])


def _variability(model: DiagnosableModel, group: str, config: InterventionConfig,
                 testset: Optional[Dataset]) -> Optional[float]:
    if testset is None or len(testset) == 0 or not model.has_classifier:
        return None
    idx = model.registry.indices(group)
    shaken = model.clone(perturb(model.params, idx, config.reference_alpha, config.reference_seed))
    return prediction_variability(model, shaken, testset)


def run_intervention(model: DiagnosableModel, data: Dataset, config: InterventionConfig, opt: OptimizerConfig,
                     batch: Batch, selection: Sequence[IndexSet], labels: Sequence[str], groups: Sequence[str],
                     testset: Optional[Dataset] = None, diagnostic_batch: str = "",
                     progress: bool = False) -> InterventionReport:
    """Retrain a clone with the target group's learning rate scaled and compare before/after.

    Coupling is the normalized coefficient of the tracked pair (default: the
    strongest cross-group pair before retraining). Variability is measured under
    the fixed reference perturbation of the target group. The input model is
    not modified. A divergence during retraining yields a report flagged
    incomplete with the after-fields unset.

    Args:
        model (DiagnosableModel): Baseline model.
        data (Dataset): Training split for retraining.
        config (InterventionConfig): Target group, scale, epochs, reference perturbation, tracked pair.
        opt (OptimizerConfig): Baseline optimizer settings.
        batch (Batch): Diagnostic batch.
        selection (Sequence[IndexSet]): Interaction selection.
        labels (Sequence[str]): Labels of the selection entries.
        groups (Sequence[str]): Owning group of each entry.
        testset (Optional[Dataset]): Fixed test set for variability.
        diagnostic_batch (str, optional): Batch identifier recorded in the report.
        progress (bool, optional): Show a progress bar. Defaults to False.

    Returns:
        InterventionReport: Before and after measurements with every seed."""
    clone = model.clone()
    before = interaction_matrix(clone, batch, selection, labels, groups)
    if config.tracked_pair is not None:
        pair = tuple(config.tracked_pair)
    else:
        ranked = rank_couplings(before)
        if not ranked:
            raise InvalidConfigError("No cross-group pair to track. Please select parameters from two groups.")
        pair = (ranked[0].a, ranked[0].b)
    target = config.target_group or groups[list(labels).index(pair[0])]
    model.registry.require([target])

    report = dict(
        target_group=target, lr_scale=config.lr_scale, tracked_pair=list(pair),
        coupling_before=_coupling(before, pair),
        variability_before=_variability(clone, target, config, testset),
        retrain_epochs=config.retrain_epochs, reference_alpha=config.reference_alpha,
        reference_seed=config.reference_seed, shuffle_seed=opt.shuffle_seed or 0,
        diagnostic_batch=diagnostic_batch,
    )
    scales = dict(opt.group_lr_scale)
    scales[target] = scales.get(target, 1.0) * config.lr_scale
    retrain = opt.model_copy(update={"epochs": config.retrain_epochs, "group_lr_scale": scales,
                                     "injection": None, "monitor_curvature": False})
    try:
        train(clone, data, retrain, progress=progress)
    except DivergenceError as e:
        logger.warning("intervention on %s diverged: %s", target, e)
        return InterventionReport(**report, incomplete=True, detail=str(e))

    after = interaction_matrix(clone, batch, selection, labels, groups)
    report.update(coupling_after=_coupling(after, pair),
                  variability_after=_variability(clone, target, config, testset))
    logger.info("intervention on %s: coupling %.4f -> %.4f", target, report["coupling_before"],
                report["coupling_after"])
    return InterventionReport(**report)
