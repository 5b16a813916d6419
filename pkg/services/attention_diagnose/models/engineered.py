from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..autodiff.graph import Batch, ParamSpec
from ..autodiff.tensor import Tensor
from ..base.base_models import DiagnosableModel
from ..commons.errors import InvalidConfigError

Bottleneck = Tuple[int, int, float]


class EngineeredQuadraticClient(DiagnosableModel):
    """Polynomial loss with a known curvature layout.

    L(θ) = ½ θᵀAθ + bᵀθ + Σ ½κ (θ_i θ_j)²

    θ is laid out block by block in the order of `blocks` (group name -> size);
    every block is one parameter tensor of its group. The loss ignores the
    batch, so any dataset can drive the trainer."""
    kind = "engineered"

    def __init__(self, hessian: np.ndarray, blocks: Dict[str, int], linear: Optional[np.ndarray] = None,
                 bottlenecks: Sequence[Bottleneck] = (), theta: Optional[np.ndarray] = None) -> None:
        self.blocks = dict(blocks)
        n = sum(self.blocks.values())
        self.hessian = np.asarray(hessian, dtype=np.float64)
        if self.hessian.shape != (n, n):
            raise InvalidConfigError(f"Hessian must be {n}x{n} for blocks {self.blocks}.")
        if not np.allclose(self.hessian, self.hessian.T, rtol=0.0, atol=1e-12):
            raise InvalidConfigError("Hessian of an engineered model must be symmetric.")
        self.linear = np.zeros(n) if linear is None else np.asarray(linear, dtype=np.float64)
        self.bottlenecks: List[Bottleneck] = [(int(i), int(j), float(k)) for i, j, k in bottlenecks]
        for i, j, _ in self.bottlenecks:
            if not (0 <= i < n and 0 <= j < n):
                raise InvalidConfigError(f"Bottleneck ({i}, {j}) is outside the {n} parameters.")
        super().__init__()
        self.params = np.zeros(n) if theta is None else self.graph.check_params(theta).copy()

    def param_specs(self) -> List[ParamSpec]:
        return [ParamSpec(name, (size,), name, 1) for name, size in self.blocks.items()]

    def clone(self, params: Optional[np.ndarray] = None) -> "EngineeredQuadraticClient":
        return EngineeredQuadraticClient(self.hessian, self.blocks, self.linear, self.bottlenecks,
                                         self.params if params is None else params)

    def _coordinate(self, p: Dict[str, Tensor], index: int) -> Tensor:
        for spec in self.specs:
            sl = self.graph.offsets[spec.name]
            if sl.start <= index < sl.stop:
                mask = np.zeros(spec.size)
                mask[index - sl.start] = 1.0
                return (p[spec.name] * Tensor(mask)).sum()
        raise IndexError(index)

    def loss_graph(self, p: Dict[str, Tensor], batch: Batch) -> Tensor:
        loss = None
        for gi in self.specs:
            row = p[gi.name].reshape(1, gi.size)
            si = self.graph.offsets[gi.name]
            for gj in self.specs:
                block = self.hessian[si, self.graph.offsets[gj.name]]
                if not np.any(block):
                    continue
                term = (row @ Tensor(block) @ p[gj.name].reshape(gj.size, 1)).sum() * 0.5
                loss = term if loss is None else loss + term
            lin = self.linear[si]
            if np.any(lin):
                term = (p[gi.name] * Tensor(lin)).sum()
                loss = term if loss is None else loss + term
        for i, j, kappa in self.bottlenecks:
            prod = self._coordinate(p, i) * self._coordinate(p, j)
            term = prod * prod * (0.5 * kappa)
            loss = term if loss is None else loss + term
        if loss is None:
            loss = (p[self.specs[0].name] * 0.0).sum()
        return loss


def block_quadratic(blocks: Dict[str, np.ndarray], coupling: Optional[Dict[Tuple[int, int], float]] = None,
                    theta: Optional[np.ndarray] = None) -> EngineeredQuadraticClient:
    """Engineered quadratic with the given diagonal blocks and optional symmetric cross entries.

    Args:
        blocks (Dict[str, np.ndarray]): Group name -> symmetric block of the Hessian.
        coupling (Optional[Dict[Tuple[int, int], float]]): Global (i, j) -> H_ij, mirrored to H_ji.
        theta (Optional[np.ndarray]): Evaluation point. Defaults to zeros.

    Returns:
        EngineeredQuadraticClient: Model whose Hessian is exactly the assembled matrix."""
    sizes = {name: np.asarray(b).shape[0] for name, b in blocks.items()}
    n = sum(sizes.values())
    hessian = np.zeros((n, n))
    start = 0
    for name, b in blocks.items():
        k = sizes[name]
        hessian[start:start + k, start:start + k] = b
        start += k
    for (i, j), value in (coupling or {}).items():
        hessian[i, j] = hessian[j, i] = value
    return EngineeredQuadraticClient(hessian, sizes, theta=theta)
