import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from models.config import EstimatorConfig, PerturbationSpec
from models.reports import PerturbationTrial, SweepSummaryRow

from ..autodiff.graph import Batch, HessianOperator, loss_and_gradient
from ..base.base_models import DiagnosableModel
from ..commons.errors import DiagnosisError, InvalidConfigError, NonFiniteError
from ..commons.functions import predict
from ..commons.norms import gradient_norm
from ..commons.rng import derive_rng, trial_seed
from ..loaders.dataset_loader import Dataset
from ..spectral.hutchinson import group_trace
from ..spectral.operators import IndexSet, check_indices, group_restricted_hvp

logger = logging.getLogger(__name__)


def perturb(params: np.ndarray, group: IndexSet, alpha: float, seed: int) -> np.ndarray:
    """θ + α·δ with δ ~ N(0, I) on the group coordinates and zero elsewhere.

    The input is never modified; α = 0 or an empty group returns an exact copy.

    Args:
        params (np.ndarray): Flat parameter vector.
        group (IndexSet): Coordinates to perturb.
        alpha (float): Perturbation magnitude (>= 0).
        seed (int): Noise seed.

    Returns:
        np.ndarray: Perturbed copy."""
    if alpha < 0:
        raise ValueError(f"alpha must be nonnegative, got {alpha}.")
    out = np.array(params, dtype=np.float64, copy=True)
    idx = check_indices(group, out.shape[0])
    if alpha == 0 or idx.size == 0:
        return out
    out[idx] += alpha * derive_rng(seed).standard_normal(idx.size)
    return out


def prediction_variability(base: DiagnosableModel, perturbed: DiagnosableModel, testset: Dataset) -> float:
    """Fraction of test examples whose predicted label differs between the two models."""
    if type(base) is not type(perturbed) or getattr(base, "config", None) != getattr(perturbed, "config", None):
        raise InvalidConfigError("prediction_variability needs two models of the same configuration.")
    if len(testset) == 0:
        raise ValueError("prediction_variability needs a nonempty test set.")
    return float(np.mean(predict(base, testset.inputs) != predict(perturbed, testset.inputs)))


def _group_trace(model: DiagnosableModel, batch: Batch, idx: np.ndarray, config: EstimatorConfig) -> float:
    op = group_restricted_hvp(model, batch, idx, HessianOperator(model.graph, model.params, batch))
    return group_trace(op, config.mode, config.dense_limit, config.hutchinson_probes, config.probe_seed or 0)


def sweep(model: DiagnosableModel, batch: Batch, spec: PerturbationSpec, testset: Optional[Dataset] = None,
          workers: int = 1, progress: bool = False,
          estimators: Optional[EstimatorConfig] = None) -> List[PerturbationTrial]:
    """Evaluate every (α, trial) perturbation of one group against the unperturbed baseline.

    Trials are ordered by (alpha index, trial index) whatever the number of
    workers. A non-finite perturbed loss is recorded with `diverged` set.

    Args:
        model (DiagnosableModel): Model at its baseline parameters.
        batch (Batch): Diagnostic batch for losses and gradients.
        spec (PerturbationSpec): Group, α grid, trial count and noise seed.
        testset (Optional[Dataset]): Fixed test set for prediction variability.
        workers (int, optional): Threads evaluating trials. Defaults to 1.
        progress (bool, optional): Show a progress bar. Defaults to False.
        estimators (Optional[EstimatorConfig]): Dense/estimator choice for `track_curvature`.

    Returns:
        List[PerturbationTrial]: trials_per_alpha · len(alphas) records."""
    idx = model.registry.indices(spec.group)
    estimators = estimators or EstimatorConfig()
    noise_seed = spec.noise_seed or 0
    loss_base, grad_base = loss_and_gradient(model.graph, model.params, batch)
    grad_norm_base = gradient_norm(grad_base, idx)
    with_variability = testset is not None and model.has_classifier and len(testset) > 0
    base_preds = predict(model, testset.inputs) if with_variability else None
    trace_base = _group_trace(model, batch, idx, estimators) if spec.track_curvature else None

    def run(coords: Tuple[int, int]) -> PerturbationTrial:
        ai, ti = coords
        alpha, seed = spec.alphas[ai], trial_seed(noise_seed, ai, ti)
        row = dict(group=spec.group, alpha=alpha, trial_seed=seed, loss_base=loss_base,
                   grad_norm_base=grad_norm_base, trace_base=trace_base)
        if alpha == 0:
            return PerturbationTrial(**row, loss_perturbed=loss_base, grad_norm_perturbed=grad_norm_base,
                                     variability=0.0 if with_variability else None, trace_perturbed=trace_base)
        clone = model.clone(perturb(model.params, idx, alpha, seed))
        try:
            loss, g = loss_and_gradient(clone.graph, clone.params, batch)
            variability = (float(np.mean(predict(clone, testset.inputs) != base_preds))
                           if with_variability else None)
        except NonFiniteError as e:
            logger.info("trial %s alpha=%g diverged: %s", seed, alpha, e)
            return PerturbationTrial(**row, loss_perturbed=float("nan"), grad_norm_perturbed=float("nan"),
                                     diverged=True)
        trace = None
        if spec.track_curvature:
            try:
                trace = _group_trace(clone, batch, idx, estimators)
            except DiagnosisError as e:
                logger.info("curvature at trial %s unavailable: %s", seed, e)
        return PerturbationTrial(**row, loss_perturbed=loss, grad_norm_perturbed=gradient_norm(g, idx),
                                 variability=variability, trace_perturbed=trace)

    coords = [(ai, ti) for ai in range(len(spec.alphas)) for ti in range(spec.trials_per_alpha)]
    coords_iter = tqdm(coords, desc=f"sweep {spec.group}", disable=not progress, leave=False)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trials = list(pool.map(run, coords_iter))
    else:
        trials = [run(c) for c in coords_iter]
    logger.info("sweep %s: %d trials, %d diverged", spec.group, len(trials), sum(t.diverged for t in trials))
    return trials


def _stderr(values: np.ndarray) -> float:
    return float(values.std(ddof=1) / np.sqrt(values.size)) if values.size > 1 else 0.0


def summarize_sweep(trials: List[PerturbationTrial]) -> List[SweepSummaryRow]:
    """Per (group, α): mean and standard error of the loss delta over non-diverged trials."""
    buckets: Dict[Tuple[str, float], List[PerturbationTrial]] = {}
    for t in trials:
        buckets.setdefault((t.group, t.alpha), []).append(t)
    rows = []
    for (group, alpha), bucket in buckets.items():
        finite = [t for t in bucket if not t.diverged]
        deltas = np.asarray([t.loss_delta for t in finite])
        varis = [t.variability for t in finite if t.variability is not None]
        rows.append(SweepSummaryRow(
            group=group, alpha=alpha, trials=len(bucket),
            mean_delta=float(deltas.mean()) if deltas.size else float("nan"),
            stderr_delta=_stderr(deltas),
            mean_abs_delta=float(np.abs(deltas).mean()) if deltas.size else float("nan"),
            mean_variability=float(np.mean(varis)) if varis else None,
            divergences=len(bucket) - len(finite),
        ))
    return rows
