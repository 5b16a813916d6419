import logging
from contextlib import contextmanager, nullcontext
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..commons.errors import NonFiniteError, ShapeMismatchError

logger = logging.getLogger(__name__)

ArrayLike = Union["Tensor", np.ndarray, float, int]

_TAPE: ContextVar[Optional["Tape"]] = ContextVar("hessflow_tape", default=None)
_GRAD_ENABLED: ContextVar[bool] = ContextVar("hessflow_grad_enabled", default=True)


@dataclass(frozen=True)
class NodeRecord:
    """One operation of a recorded computation."""
    node_id: int
    op: str
    inputs: Tuple[Optional[int], ...]
    shape: Tuple[int, ...]


class Tape:
    """Records every node created while it is active.

    Node ids are assigned in creation order, so every node's inputs precede it
    and `nodes` is a topological ordering of the computation."""
    def __init__(self) -> None:
        self.nodes: List[NodeRecord] = []
        self._token = None

    def record(self, op: str, inputs: Tuple[Optional[int], ...], shape: Tuple[int, ...]) -> int:
        node_id = len(self.nodes)
        self.nodes.append(NodeRecord(node_id, op, inputs, shape))
        return node_id

    def __enter__(self) -> "Tape":
        self._token = _TAPE.set(self)
        return self

    def __exit__(self, *exc: Any) -> None:
        _TAPE.reset(self._token)


@contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate operations without recording them for differentiation."""
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


class Tensor:
    """Dense double-precision array that remembers the operation creating it."""
    __slots__ = ("data", "requires_grad", "creator", "node_id")

    def __init__(self, data: Any, requires_grad: bool = False,
                 creator: Optional["Function"] = None, node_id: Optional[int] = None) -> None:
        self.data: np.ndarray = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.creator = creator
        self.node_id = node_id

    @classmethod
    def leaf(cls, data: Any, requires_grad: bool = True, op: str = "param") -> "Tensor":
        """Create a leaf tensor, recording it on the active tape."""
        arr = np.asarray(data, dtype=np.float64)
        tape = _TAPE.get()
        node_id = tape.record(op, (), arr.shape) if tape is not None else None
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(op, node_id)
        return cls(arr, requires_grad, None, node_id)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, False, None, self.node_id)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other: ArrayLike) -> "Tensor":
        return Add.apply(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return Add.apply(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return Add.apply(self, Neg.apply(other))

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return Add.apply(other, Neg.apply(self))

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return Mul.apply(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return Mul.apply(other, self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return Div.apply(self, other)

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return Div.apply(other, self)

    def __neg__(self) -> "Tensor":
        return Neg.apply(self)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return MatMul.apply(self, other)

    def sum(self, axis: Union[None, int, Tuple[int, ...]] = None, keepdims: bool = False) -> "Tensor":
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Union[None, int, Tuple[int, ...]] = None, keepdims: bool = False) -> "Tensor":
        axes = _normalize_axes(axis, self.ndim)
        count = int(np.prod([self.shape[a] for a in axes])) if axes else 1
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=tuple(shape))

    def permute(self, *axes: int) -> "Tensor":
        return Permute.apply(self, axes=tuple(axes))

    def swap_last(self) -> "Tensor":
        axes = list(range(self.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
        return Permute.apply(self, axes=tuple(axes))

    def exp(self) -> "Tensor":
        return Exp.apply(self)

    def log(self) -> "Tensor":
        return Log.apply(self)

    def tanh(self) -> "Tensor":
        return Tanh.apply(self)


def as_tensor(value: ArrayLike) -> Tensor:
    """Wrap scalars and arrays as constant tensors."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _normalize_axes(axis: Union[None, int, Tuple[int, ...]], ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def _unbroadcast(arr: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum out broadcasted dimensions so that arr matches shape."""
    while arr.ndim > len(shape):
        arr = arr.sum(axis=0)
    for dim, extent in enumerate(shape):
        if extent == 1 and arr.shape[dim] != 1:
            arr = arr.sum(axis=dim, keepdims=True)
    return arr


class Function:
    """Base class of differentiable operations.

    `backward` is written with Tensor operations, so the gradient it returns is
    itself differentiable; that is what makes Hessian-vector products a second
    reverse pass over the gradient computation."""
    name: str = "function"

    def __init__(self, *inputs: Tensor, **kwargs: Any) -> None:
        self.inputs = inputs
        self.kwargs = kwargs

    def forward(self, *arrays: np.ndarray) -> np.ndarray:
        raise NotImplementedError("Forward pass not implemented for this function")

    def backward(self, grad: Tensor) -> Tuple[Optional[Tensor], ...]:
        raise NotImplementedError("Backward pass not implemented for this function")

    @classmethod
    def apply(cls, *inputs: ArrayLike, **kwargs: Any) -> Tensor:
        tensors = tuple(as_tensor(x) for x in inputs)
        func = cls(*tensors, **kwargs)
        with np.errstate(all="ignore"):
            out = np.asarray(func.forward(*(t.data for t in tensors)), dtype=np.float64)
        tape = _TAPE.get()
        node_id = None
        if tape is not None:
            node_id = tape.record(cls.name, tuple(t.node_id for t in tensors), out.shape)
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(cls.name, node_id)
        requires_grad = _GRAD_ENABLED.get() and any(t.requires_grad for t in tensors)
        return Tensor(out, requires_grad, func if requires_grad else None, node_id)


def sum_to(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    return x if x.shape == tuple(shape) else SumTo.apply(x, shape=tuple(shape))


def broadcast_to(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    return x if x.shape == tuple(shape) else BroadcastTo.apply(x, shape=tuple(shape))


class Add(Function):
    name = "add"

    def forward(self, a, b):
        return a + b

    def backward(self, grad):
        a, b = self.inputs
        return sum_to(grad, a.shape), sum_to(grad, b.shape)


class Neg(Function):
    name = "neg"

    def forward(self, a):
        return -a

    def backward(self, grad):
        return (-grad,)


class Mul(Function):
    name = "multiply"

    def forward(self, a, b):
        return a * b

    def backward(self, grad):
        a, b = self.inputs
        return sum_to(grad * b, a.shape), sum_to(grad * a, b.shape)


class Div(Function):
    name = "divide"

    def forward(self, a, b):
        return a / b

    def backward(self, grad):
        a, b = self.inputs
        return sum_to(grad / b, a.shape), sum_to(-(grad * a) / (b * b), b.shape)


class MatMul(Function):
    name = "matmul"

    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeMismatchError(f"matmul expects operands of rank >= 2, got {a.shape} and {b.shape}.")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeMismatchError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}.")
        return a @ b

    def backward(self, grad):
        a, b = self.inputs
        return sum_to(grad @ b.swap_last(), a.shape), sum_to(a.swap_last() @ grad, b.shape)


class Permute(Function):
    name = "permute"

    def forward(self, a):
        return np.transpose(a, self.kwargs["axes"])

    def backward(self, grad):
        return (Permute.apply(grad, axes=tuple(int(i) for i in np.argsort(self.kwargs["axes"]))),)


class Reshape(Function):
    name = "reshape"

    def forward(self, a):
        return a.reshape(self.kwargs["shape"])

    def backward(self, grad):
        return (Reshape.apply(grad, shape=self.inputs[0].shape),)


class Exp(Function):
    name = "exp"

    def forward(self, a):
        return np.exp(a)

    def backward(self, grad):
        return (grad * self.inputs[0].exp(),)


class Log(Function):
    name = "log"

    def forward(self, a):
        return np.log(a)

    def backward(self, grad):
        return (grad / self.inputs[0],)


class Tanh(Function):
    name = "tanh"

    def forward(self, a):
        return np.tanh(a)

    def backward(self, grad):
        t = self.inputs[0].tanh()
        return (grad * (1.0 - t * t),)


class Sum(Function):
    name = "sum"

    def forward(self, a):
        axes = _normalize_axes(self.kwargs["axis"], a.ndim)
        return a.sum(axis=axes, keepdims=self.kwargs["keepdims"])

    def backward(self, grad):
        shape = self.inputs[0].shape
        axes = _normalize_axes(self.kwargs["axis"], len(shape))
        kept = tuple(1 if i in axes else n for i, n in enumerate(shape))
        return (broadcast_to(grad.reshape(kept), shape),)


class BroadcastTo(Function):
    name = "broadcast"

    def forward(self, a):
        return np.array(np.broadcast_to(a, self.kwargs["shape"]))

    def backward(self, grad):
        return (sum_to(grad, self.inputs[0].shape),)


class SumTo(Function):
    name = "sum_to"

    def forward(self, a):
        return _unbroadcast(a, self.kwargs["shape"])

    def backward(self, grad):
        return (broadcast_to(grad, self.inputs[0].shape),)


class Take(Function):
    """Row lookup `table[indices]` (embedding lookup)."""
    name = "embedding"

    def forward(self, table):
        indices = self.kwargs["indices"]
        if indices.size and (indices.min() < 0 or indices.max() >= table.shape[0]):
            raise ShapeMismatchError(f"Token index out of range for a vocabulary of {table.shape[0]}.")
        return table[indices]

    def backward(self, grad):
        table = self.inputs[0]
        return (ScatterAdd.apply(grad, indices=self.kwargs["indices"], rows=table.shape[0]),)


class ScatterAdd(Function):
    """Adjoint of Take: accumulates rows of the incoming array into a table."""
    name = "scatter_add"

    def forward(self, values):
        indices = self.kwargs["indices"]
        out = np.zeros((self.kwargs["rows"],) + values.shape[indices.ndim:])
        np.add.at(out, indices, values)
        return out

    def backward(self, grad):
        return (Take.apply(grad, indices=self.kwargs["indices"]),)


def grad(output: Tensor, inputs: Sequence[Tensor], grad_output: Optional[Tensor] = None,
         create_graph: bool = False) -> List[Tensor]:
    """Reverse-mode derivative of `output` with respect to `inputs`.

    Args:
        output (Tensor): Tensor to differentiate (a scalar unless grad_output is given).
        inputs (Sequence[Tensor]): Leaves to differentiate against.
        grad_output (Optional[Tensor]): Seed of the reverse pass. Defaults to ones.
        create_graph (bool): Record the backward pass so that the result can be
            differentiated again. Defaults to False.

    Returns:
        List[Tensor]: One gradient per input, zeros where the output does not depend on it."""
    if grad_output is None:
        if output.shape != ():
            raise ShapeMismatchError(f"grad needs a scalar output, got shape {output.shape}.")
        grad_output = Tensor(np.ones(()))
    if not output.requires_grad:
        return [Tensor(np.zeros(x.shape)) for x in inputs]

    topo: List[Tensor] = []
    seen = set()
    stack = [(output, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if node.creator is not None:
            for inp in reversed(node.creator.inputs):
                if inp.requires_grad and id(inp) not in seen:
                    stack.append((inp, False))

    wanted = {id(x) for x in inputs}
    grads: Dict[int, Tensor] = {id(output): grad_output}
    with nullcontext() if create_graph else no_grad():
        for node in reversed(topo):
            g = grads.get(id(node)) if id(node) in wanted else grads.pop(id(node), None)
            if g is None or node.creator is None:
                continue
            for inp, ig in zip(node.creator.inputs, node.creator.backward(g)):
                if ig is None or not inp.requires_grad:
                    continue
                if ig.shape != inp.shape:
                    raise ShapeMismatchError(f"{node.creator.name} backward produced {ig.shape}, "
                                             f"expected {inp.shape}.")
                acc = grads.get(id(inp))
                grads[id(inp)] = ig if acc is None else acc + ig

    out = []
    for x in inputs:
        g = grads.get(id(x))
        out.append(Tensor(np.zeros(x.shape)) if g is None else (g if create_graph else g.detach()))
    return out
