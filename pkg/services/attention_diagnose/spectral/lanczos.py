import logging
from typing import List, NamedTuple

import numpy as np

from ..commons.rng import unit_vector
from .operators import HvpClosure

logger = logging.getLogger(__name__)

_BREAKDOWN = 1e-12
_RESTART_ATTEMPTS = 8


class LanczosResult(NamedTuple):
    eigs_min: float
    eigs_max: float
    iters: int
    converged: bool


def _ritz(alphas: List[float], betas: List[float]):
    k = len(alphas)
    t = np.diag(alphas)
    if k > 1:
        off = np.asarray(betas[:k - 1])
        t += np.diag(off, 1) + np.diag(off, -1)
    return np.linalg.eigh(t)


def _orthogonalize(w: np.ndarray, basis: np.ndarray) -> np.ndarray:
    # twice is enough
    for _ in range(2):
        w = w - basis @ (basis.T @ w)
    return w


def _restart_vector(basis: np.ndarray, seed: int, restart: int) -> np.ndarray:
    n = basis.shape[0]
    for attempt in range(_RESTART_ATTEMPTS):
        q = _orthogonalize(unit_vector(seed, 1 + restart * _RESTART_ATTEMPTS + attempt, n), basis)
        norm = np.linalg.norm(q)
        if norm > 1e-8:
            return q / norm
    raise ArithmeticError("Could not draw a restart vector orthogonal to the Krylov basis.")


def lanczos_extreme(op: HvpClosure, max_iters: int = 200, tol: float = 1e-8, seed: int = 0) -> LanczosResult:
    """Extreme eigenvalues of a symmetric operator by Lanczos with full reorthogonalization.

    Convergence needs both extreme Ritz values to move by less than tol·scale
    between iterations and both residual bounds β·|s_k| to be at most tol·scale,
    where scale = max(1, max|θ|). On breakdown the iteration restarts from a
    seeded vector orthogonal to the basis built so far. Reaching the operator
    dimension makes the Ritz values exact.

    Args:
        op (HvpClosure): Symmetric operator of dimension >= 2.
        max_iters (int, optional): Iteration cap (>= 2). Defaults to 200.
        tol (float, optional): Relative tolerance. Defaults to 1e-8.
        seed (int, optional): Start vector seed. Defaults to 0.

    Returns:
        LanczosResult: (eigs_min, eigs_max, iterations, converged)."""
    n = op.dim
    if n < 2:
        raise ValueError(f"Lanczos needs dimension >= 2, got {n}.")
    if max_iters < 2:
        raise ValueError(f"max_iters must be >= 2, got {max_iters}.")

    steps = min(max_iters, n)
    basis = np.zeros((n, steps))
    alphas: List[float] = []
    betas: List[float] = []
    q = unit_vector(seed, 0, n)
    beta, restarts = 0.0, 0
    previous = None
    lo = hi = 0.0

    for k in range(steps):
        basis[:, k] = q
        w = op(q)
        alpha = float(q @ w)
        w = w - alpha * q
        if k > 0:
            w = w - beta * basis[:, k - 1]
        w = _orthogonalize(w, basis[:, :k + 1])
        alphas.append(alpha)
        beta = float(np.linalg.norm(w))

        theta, s = _ritz(alphas, betas)
        lo, hi = float(theta[0]), float(theta[-1])
        iters = k + 1
        if iters == n:
            return LanczosResult(lo, hi, iters, True)

        scale = max(1.0, abs(lo), abs(hi))
        residual = beta * max(abs(s[-1, 0]), abs(s[-1, -1]))
        if (previous is not None and abs(lo - previous[0]) < tol * scale
                and abs(hi - previous[1]) < tol * scale and residual <= tol * scale):
            logger.debug("lanczos converged after %d iterations", iters)
            return LanczosResult(lo, hi, iters, True)
        previous = (lo, hi)

        if beta <= _BREAKDOWN * scale:
            betas.append(0.0)
            beta = 0.0
            q = _restart_vector(basis[:, :k + 1], seed, restarts)
            restarts += 1
        else:
            betas.append(beta)
            q = w / beta

    logger.warning("lanczos did not converge within %d iterations (dim %d)", steps, n)
    return LanczosResult(lo, hi, steps, False)
