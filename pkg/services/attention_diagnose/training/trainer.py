import logging
from typing import Dict, Optional

import numpy as np
from tqdm import tqdm

from models.config import EstimatorConfig, OptimizerConfig
from models.reports import TrainingEpoch, TrainingTrace

from ..autodiff.graph import Batch, HessianOperator, forward, gradient
from ..base.base_models import DiagnosableModel
from ..commons.errors import DivergenceError, NonFiniteError
from ..commons.functions import accuracy
from ..commons.rng import derive_rng
from ..loaders.dataset_loader import Dataset
from ..spectral.hutchinson import group_trace
from ..spectral.operators import group_restricted_hvp

logger = logging.getLogger(__name__)


def learning_rates(model: DiagnosableModel, opt: OptimizerConfig) -> np.ndarray:
    """Per-coordinate learning rate: the global rate times each group's scale factor."""
    rates = np.full(model.dim, opt.learning_rate)
    for group in model.registry.require(opt.group_lr_scale):
        rates[model.registry.indices(group)] = opt.learning_rate * opt.group_lr_scale[group]
    return rates


def group_traces(model: DiagnosableModel, batch: Batch,
                 estimators: Optional[EstimatorConfig] = None) -> Dict[str, float]:
    """Hessian trace of every attention group at the current parameters.

    Groups up to `estimators.dense_limit` are exact; larger ones use Hutchinson."""
    config = estimators or EstimatorConfig()
    operator = HessianOperator(model.graph, model.params, batch)
    return {
        name: group_trace(group_restricted_hvp(model, batch, model.registry.indices(name), operator), config.mode,
                          config.dense_limit, config.hutchinson_probes, config.probe_seed or 0)
        for name in model.registry.names
    }


def train(model: DiagnosableModel, data: Dataset, opt: OptimizerConfig, diagnostic: Optional[Batch] = None,
          progress: bool = False, estimators: Optional[EstimatorConfig] = None) -> TrainingTrace:
    """Plain mini-batch SGD with per-group learning rates, updating the model in place.

    After every step an optional injection adds alpha·δ to one group, δ drawn
    from (injection seed, epoch, batch). A group scaled by 0 gets no gradient
    update, though an injection aimed at it still moves it.

    Args:
        model (DiagnosableModel): Model to train.
        data (Dataset): Training split.
        opt (OptimizerConfig): Epochs, batch size, rates, shuffle seed, injection.
        diagnostic (Optional[Batch]): Batch for per-epoch curvature monitoring.
        progress (bool, optional): Show a progress bar. Defaults to False.
        estimators (Optional[EstimatorConfig]): Dense/estimator choice for curvature monitoring.

    Returns:
        TrainingTrace: Loss and accuracy on the full split after every epoch."""
    rates = learning_rates(model, opt)
    shuffle_seed = opt.shuffle_seed or 0
    injection = opt.injection
    inject_idx = model.registry.indices(injection.group) if injection is not None else None
    monitor = opt.monitor_curvature and diagnostic is not None
    n = len(data)
    params = model.params.copy()
    trace = TrainingTrace(learning_rate=opt.learning_rate, group_lr_scale=dict(opt.group_lr_scale),
                          shuffle_seed=shuffle_seed, batch_size=opt.batch_size,
                          injection=injection.model_dump() if injection is not None else None)

    for epoch in tqdm(range(opt.epochs), desc="train", disable=not progress, leave=False):
        order = derive_rng(shuffle_seed, epoch).permutation(n)
        for b, start in enumerate(range(0, n, opt.batch_size)):
            batch = data.batch(order[start:start + opt.batch_size])
            try:
                g = gradient(model.graph, params, batch)
            except NonFiniteError as e:
                raise DivergenceError(epoch, b, str(e)) from e
            params = params - rates * g
            if inject_idx is not None and injection.alpha > 0 and inject_idx.size:
                params[inject_idx] += injection.alpha * derive_rng(injection.seed, epoch, b).standard_normal(
                    inject_idx.size)
            if not np.all(np.isfinite(params)):
                raise DivergenceError(epoch, b, "Parameters became non-finite.")
        model.params = params
        try:
            loss = forward(model.graph, params, data.batch())
        except NonFiniteError as e:
            raise DivergenceError(epoch, -1, str(e)) from e
        acc = accuracy(model, data.inputs, data.labels) if model.has_classifier else None
        record = TrainingEpoch(epoch=epoch, loss=loss, accuracy=acc,
                               group_traces=group_traces(model, diagnostic, estimators) if monitor else None)
        trace.epochs.append(record)
        logger.info("epoch %d loss=%.6f accuracy=%s", epoch, loss, "n/a" if acc is None else f"{acc:.3f}")

    model.params = params
    return trace
