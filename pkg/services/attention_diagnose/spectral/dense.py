import logging
import math
from typing import NamedTuple

import numpy as np
from numba import njit
from tqdm import tqdm

from ..commons.constants import DENSE_GUARD
from ..commons.errors import DimensionGuardError, NotSymmetricError
from .operators import HvpClosure

logger = logging.getLogger(__name__)

_EPS = 2.220446049250313e-16


class DenseHessian(NamedTuple):
    matrix: np.ndarray
    asymmetry: float


def dense_hessian(op: HvpClosure, guard: int = DENSE_GUARD, progress: bool = False) -> DenseHessian:
    """Materialize the operator column by column and symmetrize it.

    Args:
        op (HvpClosure): Operator to materialize.
        guard (int, optional): Largest allowed dimension. Defaults to DENSE_GUARD.
        progress (bool, optional): Show a progress bar. Defaults to False.

    Returns:
        DenseHessian: (A + Aᵀ)/2 and max|A − Aᵀ| of the raw columns."""
    n = op.dim
    if n > guard:
        raise DimensionGuardError(f"Dense Hessian of dimension {n} exceeds the guard of {guard}.")
    matrix = np.empty((n, n))
    for j in tqdm(range(n), desc="dense hessian", disable=not progress, leave=False):
        e = np.zeros(n)
        e[j] = 1.0
        matrix[:, j] = op(e)
    gap = float(np.max(np.abs(matrix - matrix.T))) if n else 0.0
    if gap > 0:
        logger.debug("dense hessian asymmetry %.3g before symmetrization", gap)
    return DenseHessian(0.5 * (matrix + matrix.T), gap)


@njit(cache=True)
def _householder_tridiagonal(a):
    n = a.shape[0]
    a = a.copy()
    v = np.zeros(n)
    p = np.zeros(n)
    for k in range(n - 2):
        xnorm = 0.0
        for i in range(k + 1, n):
            xnorm += a[i, k] * a[i, k]
        xnorm = math.sqrt(xnorm)
        if xnorm == 0.0:
            continue
        alpha = -xnorm if a[k + 1, k] >= 0.0 else xnorm
        for i in range(k + 1, n):
            v[i] = a[i, k]
        v[k + 1] -= alpha
        vnorm = 0.0
        for i in range(k + 1, n):
            vnorm += v[i] * v[i]
        vnorm = math.sqrt(vnorm)
        if vnorm == 0.0:
            continue
        for i in range(k + 1, n):
            v[i] /= vnorm
        for i in range(k + 1, n):
            s = 0.0
            for j in range(k + 1, n):
                s += a[i, j] * v[j]
            p[i] = s
        kk = 0.0
        for i in range(k + 1, n):
            kk += v[i] * p[i]
        for i in range(k + 1, n):
            p[i] -= kk * v[i]
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                a[i, j] -= 2.0 * (v[i] * p[j] + p[i] * v[j])
        a[k + 1, k] = alpha
        a[k, k + 1] = alpha
        for i in range(k + 2, n):
            a[i, k] = 0.0
            a[k, i] = 0.0
    d = np.zeros(n)
    e = np.zeros(n)
    for i in range(n):
        d[i] = a[i, i]
    for i in range(n - 1):
        e[i] = a[i + 1, i]
    return d, e


@njit(cache=True)
def _implicit_ql(d, e):
    n = d.shape[0]
    d = d.copy()
    e = e.copy()
    if n == 0:
        return d
    e[n - 1] = 0.0
    for l in range(n):
        it = 0
        while True:
            m = l
            while m + 1 < n:
                if abs(e[m]) <= _EPS * (abs(d[m]) + abs(d[m + 1])):
                    break
                m += 1
            if m == l:
                break
            if it >= 60:
                raise ValueError("implicit QL did not converge")
            it += 1
            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            r = math.hypot(g, 1.0)
            g = d[m] - d[l] + e[l] / (g - r if g < 0.0 else g + r)
            s = 1.0
            c = 1.0
            p = 0.0
            i = m - 1
            while i >= l:
                f = s * e[i]
                b = c * e[i]
                if abs(f) > abs(g):
                    c = g / f
                    r = math.hypot(c, 1.0)
                    e[i + 1] = f * r
                    s = 1.0 / r
                    c *= s
                else:
                    s = f / g
                    r = math.hypot(s, 1.0)
                    e[i + 1] = g * r
                    c = 1.0 / r
                    s *= c
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
                i -= 1
            d[l] -= p
            e[l] = g
            e[m] = 0.0
    return np.sort(d)


def tridiagonalize(matrix: np.ndarray):
    """Householder reduction of a symmetric matrix to (diagonal, off-diagonal)."""
    d, e = _householder_tridiagonal(np.ascontiguousarray(matrix, dtype=np.float64))
    return d, e[:-1] if e.size else e


def exact_spectrum(matrix: np.ndarray, guard: int = DENSE_GUARD) -> np.ndarray:
    """All eigenvalues of a symmetric matrix, ascending.

    Raises:
        NotSymmetricError: If the matrix is not symmetric within 1e-8 relative.
        DimensionGuardError: If the matrix is larger than `guard`."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NotSymmetricError(f"Expected a square matrix, got shape {m.shape}.")
    if m.shape[0] > guard:
        raise DimensionGuardError(f"Spectrum of dimension {m.shape[0]} exceeds the guard of {guard}.")
    if m.size == 0:
        return np.zeros(0)
    scale = max(1.0, float(np.max(np.abs(m))))
    if float(np.max(np.abs(m - m.T))) > 1e-8 * scale:
        raise NotSymmetricError("Matrix is not symmetric.")
    d, e = _householder_tridiagonal(np.ascontiguousarray(m))
    return _implicit_ql(d, e)
