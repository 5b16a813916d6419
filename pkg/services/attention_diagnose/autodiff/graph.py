import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from ..commons.errors import NonFiniteError, ShapeMismatchError
from .tensor import NodeRecord, Tape, Tensor, grad

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ParamSpec:
    """One parameter tensor of a model: name, shape, owning group and fan-in."""
    name: str
    shape: Tuple[int, ...]
    group: str
    fan_in: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


@dataclass(frozen=True)
class Batch:
    """Model inputs keyed by name (token grids, streams) plus integer labels."""
    inputs: Dict[str, np.ndarray]
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return int(self.labels.shape[0])


class Traced(NamedTuple):
    """A recorded evaluation: node list, parameter leaves and the scalar loss."""
    tape: Tape
    leaves: List[Tensor]
    loss: Tensor

    @property
    def nodes(self) -> List[NodeRecord]:
        return self.tape.nodes

    @property
    def param_node_ids(self) -> List[int]:
        return [leaf.node_id for leaf in self.leaves]

    @property
    def output_node_id(self) -> int:
        return self.loss.node_id


Builder = Callable[[Dict[str, Tensor], Batch], Tensor]


class Graph:
    """Loss recipe of a model: canonical parameter layout plus a builder.

    The canonical ordering of the flat parameter vector is the order of
    `specs`; it depends only on the model configuration."""
    def __init__(self, specs: Sequence[ParamSpec], builder: Builder,
                 batch_check: Optional[Callable[[Batch], None]] = None) -> None:
        self.specs: Tuple[ParamSpec, ...] = tuple(specs)
        self._builder, self._batch_check = builder, batch_check
        self.offsets: Dict[str, slice] = {}
        start = 0
        for spec in self.specs:
            self.offsets[spec.name] = slice(start, start + spec.size)
            start += spec.size
        self.dim: int = start

    def check_params(self, flat: np.ndarray, name: str = "params") -> np.ndarray:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.ndim != 1 or flat.shape[0] != self.dim:
            raise ShapeMismatchError(f"{name} has shape {flat.shape}, expected ({self.dim},).")
        return flat

    def unflatten(self, flat: np.ndarray) -> Dict[str, np.ndarray]:
        flat = self.check_params(flat)
        return {s.name: flat[self.offsets[s.name]].reshape(s.shape) for s in self.specs}

    def trace(self, params: np.ndarray, batch: Batch, tape: Optional[Tape] = None) -> Traced:
        """Evaluate the loss while recording every node.

        Raises:
            ShapeMismatchError: If params or batch do not fit the graph.
            NonFiniteError: At the first node producing NaN or infinity."""
        arrays = self.unflatten(params)
        if self._batch_check is not None:
            self._batch_check(batch)
        tape = tape or Tape()
        with tape:
            leaves = [Tensor.leaf(arrays[s.name], op=f"param:{s.name}") for s in self.specs]
            loss = self._builder({s.name: t for s, t in zip(self.specs, leaves)}, batch)
        if loss.shape != ():
            raise ShapeMismatchError(f"Loss must be a scalar, got shape {loss.shape}.")
        return Traced(tape, leaves, loss)


def flatten(tensors: Sequence[Tensor]) -> np.ndarray:
    if not tensors:
        return np.zeros(0)
    return np.concatenate([t.data.ravel() for t in tensors])


def _check_finite(vec: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(vec)):
        bad = int(np.flatnonzero(~np.isfinite(vec))[0])
        raise NonFiniteError(what, None, f"First non-finite component is {bad}.")
    return vec


def forward(graph: Graph, params: np.ndarray, batch: Batch) -> float:
    """Evaluate the scalar loss L(θ)."""
    return graph.trace(params, batch).loss.item()


def loss_and_gradient(graph: Graph, params: np.ndarray, batch: Batch) -> Tuple[float, np.ndarray]:
    """L(θ) and ∇L(θ) from one recorded evaluation."""
    traced = graph.trace(params, batch)
    with traced.tape:
        grads = grad(traced.loss, traced.leaves)
    return traced.loss.item(), _check_finite(flatten(grads), "gradient")


def gradient(graph: Graph, params: np.ndarray, batch: Batch) -> np.ndarray:
    """Exact reverse-mode gradient ∇L(θ) as a flat vector."""
    return loss_and_gradient(graph, params, batch)[1]


class HessianOperator:
    """Hessian-vector products at a fixed (params, batch).

    The gradient graph is recorded once; each product differentiates
    ⟨∇L(θ), v⟩ with respect to θ, which is a single extra reverse pass."""
    def __init__(self, graph: Graph, params: np.ndarray, batch: Batch) -> None:
        self.graph = graph
        self.traced = graph.trace(params, batch)
        with self.traced.tape:
            self._grads = grad(self.traced.loss, self.traced.leaves, create_graph=True)
        self.loss: float = self.traced.loss.item()
        self.gradient: np.ndarray = _check_finite(flatten(self._grads), "gradient")
        self.dim: int = graph.dim

    def __call__(self, v: np.ndarray) -> np.ndarray:
        vs = self.graph.unflatten(self.graph.check_params(v, "v"))
        with Tape():
            dot = None
            for spec, g in zip(self.graph.specs, self._grads):
                term = (g * Tensor(vs[spec.name])).sum()
                dot = term if dot is None else dot + term
            if dot is None:
                return np.zeros(0)
            hv = grad(dot, self.traced.leaves)
        return _check_finite(flatten(hv), "hvp")


def hvp(graph: Graph, params: np.ndarray, batch: Batch, v: np.ndarray) -> np.ndarray:
    """H·v with H = ∇²L(θ), by double backward."""
    graph.check_params(v, "v")
    return HessianOperator(graph, params, batch)(v)
