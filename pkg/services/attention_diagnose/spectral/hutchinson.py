import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Tuple

import numpy as np
from tqdm import tqdm

from ..commons.rng import rademacher
from .dense import dense_hessian
from .operators import HvpClosure

logger = logging.getLogger(__name__)


def hutchinson_trace(op: HvpClosure, probes: int, seed: int, workers: int = 1,
                     progress: bool = False) -> Tuple[float, float]:
    """Estimate Tr(A) as the mean of vᵀAv over Rademacher probes.

    Probe i is generated from (seed, i) alone, so any number of workers gives
    the same samples, summed in index order.

    Args:
        op (HvpClosure): Symmetric operator.
        probes (int): Number of probes (>= 1).
        seed (int): Probe family seed.
        workers (int, optional): Threads evaluating probes. Defaults to 1.
        progress (bool, optional): Show a progress bar. Defaults to False.

    Returns:
        Tuple[float, float]: Trace estimate and its sample standard error."""
    if probes < 1:
        raise ValueError(f"probes must be >= 1, got {probes}.")

    def sample(i: int) -> float:
        v = rademacher(seed, i, op.dim)
        return float(v @ op(v))

    indices = tqdm(range(probes), desc="hutchinson", disable=not progress, leave=False)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = np.fromiter(pool.map(sample, indices), dtype=np.float64, count=probes)
    else:
        samples = np.fromiter((sample(i) for i in indices), dtype=np.float64, count=probes)

    stderr = float(samples.std(ddof=1) / np.sqrt(probes)) if probes > 1 else 0.0
    trace = float(samples.mean())
    logger.debug("hutchinson dim=%d probes=%d trace=%.6g stderr=%.3g", op.dim, probes, trace, stderr)
    return trace, stderr


def prefers_dense(mode: str, dim: int, dense_limit: int) -> bool:
    """Whether a block of this size is materialized instead of estimated.

    Single-parameter blocks are always exact."""
    return mode == "dense" or (mode == "auto" and dim <= dense_limit) or dim < 2


def group_trace(op: HvpClosure, mode: str, dense_limit: int, probes: int, seed: int) -> float:
    """Exact trace for small blocks, Hutchinson estimate above `dense_limit`."""
    if prefers_dense(mode, op.dim, dense_limit):
        return float(np.trace(dense_hessian(op).matrix))
    return hutchinson_trace(op, probes, seed)[0]
