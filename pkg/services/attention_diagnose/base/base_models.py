from abc import ABC, abstractmethod
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..autodiff.functional import cross_entropy_with_logits, linear, softmax
from ..autodiff.graph import Batch, Graph, ParamSpec
from ..autodiff.tensor import Tensor, no_grad
from ..commons.constants import MAX_PARAMETERS, OTHER_GROUP
from ..commons.errors import InvalidConfigError, ShapeMismatchError, UnknownGroupError
from ..commons.rng import derive_rng


class GroupRegistry:
    """Named attention components mapped to disjoint parameter index sets.

    Every parameter that belongs to no attention group is tagged "other"."""
    def __init__(self, dim: int, groups: Dict[str, Sequence[int]]) -> None:
        self.dim = int(dim)
        self._groups: Dict[str, np.ndarray] = {}
        owner = np.full(self.dim, -1, dtype=np.int64)
        for pos, (name, idx) in enumerate(groups.items()):
            if name == OTHER_GROUP:
                raise InvalidConfigError(f"'{OTHER_GROUP}' is reserved for non-attention parameters.")
            arr = np.asarray(sorted(int(i) for i in idx), dtype=np.int64)
            if arr.size and (arr[0] < 0 or arr[-1] >= self.dim):
                raise InvalidConfigError(f"Group '{name}' has indices outside [0, {self.dim}).")
            if arr.size and (np.any(owner[arr] >= 0) or np.unique(arr).size != arr.size):
                raise InvalidConfigError(f"Group '{name}' overlaps another group.")
            owner[arr] = pos
            self._groups[name] = arr
        self._other = np.flatnonzero(owner < 0).astype(np.int64)
        self._owner = owner

    @classmethod
    def from_specs(cls, specs: Sequence[ParamSpec], offsets: Dict[str, slice], dim: int) -> "GroupRegistry":
        groups: Dict[str, List[int]] = {}
        for spec in specs:
            if spec.group == OTHER_GROUP:
                continue
            sl = offsets[spec.name]
            groups.setdefault(spec.group, []).extend(range(sl.start, sl.stop))
        return cls(dim, groups)

    @property
    def names(self) -> List[str]:
        return list(self._groups)

    def indices(self, name: str) -> np.ndarray:
        if name == OTHER_GROUP:
            return self._other
        try:
            return self._groups[name]
        except KeyError:
            raise UnknownGroupError([name], self.names) from None

    def require(self, names: Iterable[str]) -> List[str]:
        names = list(names)
        unknown = [n for n in names if n not in self._groups]
        if unknown:
            raise UnknownGroupError(unknown, self.names)
        return names

    def tag_of(self, index: int) -> str:
        pos = int(self._owner[index])
        return OTHER_GROUP if pos < 0 else self.names[pos]

    def partition(self) -> Dict[str, np.ndarray]:
        """All groups plus "other"; together they cover every index exactly once."""
        out = dict(self._groups)
        out[OTHER_GROUP] = self._other
        return out

    def to_dict(self) -> Dict[str, List[int]]:
        return {name: idx.tolist() for name, idx in self._groups.items()}


class DiagnosableModel(ABC):
    """A loss graph, its flat parameter vector and the attention group registry.

    Instances are value objects: `clone` returns an independent copy and no
    method mutates the graph, so clones can be evaluated in parallel."""
    kind: str = "base"
    has_classifier: bool = False

    def __init__(self) -> None:
        self.specs: List[ParamSpec] = self.param_specs()
        self.graph = Graph(self.specs, self.loss_graph, self.check_batch)
        self.registry = GroupRegistry.from_specs(self.specs, self.graph.offsets, self.graph.dim)
        self.params: np.ndarray

    @abstractmethod
    def param_specs(self) -> List[ParamSpec]:
        """Canonical list of parameter tensors."""
        pass

    @abstractmethod
    def loss_graph(self, p: Dict[str, Tensor], batch: Batch) -> Tensor:
        """Build the scalar loss over parameter tensors."""
        pass

    def check_batch(self, batch: Batch) -> None:
        pass

    @abstractmethod
    def clone(self, params: Optional[np.ndarray] = None) -> "DiagnosableModel":
        """Copy of the model, optionally with replacement parameters."""
        pass

    @property
    def dim(self) -> int:
        return self.graph.dim

    def param_arrays(self) -> Dict[str, np.ndarray]:
        return self.graph.unflatten(self.params)

    def predict_logits(self, inputs: Dict[str, np.ndarray]) -> np.ndarray:
        raise NotImplementedError(f"Model kind '{self.kind}' has no classifier head.")


class AttentionModelBase(DiagnosableModel):
    """Base class for the attention classifiers built from a ModelConfig."""
    has_classifier = True
    group_names: Tuple[str, ...] = ()

    def __init__(self, config, params: Optional[np.ndarray] = None) -> None:
        self.config = config
        self.validate_config()
        super().__init__()
        if self.dim > MAX_PARAMETERS:
            raise InvalidConfigError(f"Model has {self.dim} parameters; at most {MAX_PARAMETERS} are supported.")
        self.params = self.init_params() if params is None else self.graph.check_params(params).copy()

    def validate_config(self) -> None:
        c = self.config
        if c.kind != "hierarchical" and c.embed_dim % c.heads:
            raise InvalidConfigError(f"embed_dim ({c.embed_dim}) must be divisible by heads ({c.heads}).")

    def init_params(self) -> np.ndarray:
        """Uniform(−1/√fan-in, 1/√fan-in) per tensor, one counter stream per tensor."""
        chunks = []
        for i, spec in enumerate(self.specs):
            bound = 1.0 / np.sqrt(spec.fan_in)
            chunks.append(derive_rng(self.config.init_seed, i).uniform(-bound, bound, spec.size))
        return np.concatenate(chunks)

    def clone(self, params: Optional[np.ndarray] = None) -> "AttentionModelBase":
        return type(self)(self.config, self.params if params is None else params)

    @abstractmethod
    def input_shapes(self) -> Dict[str, Tuple[int, ...]]:
        """Per-example shape of every input array."""
        pass

    @abstractmethod
    def forward(self, p: Dict[str, Tensor], inputs: Dict[str, np.ndarray]) -> Tuple[Tensor, Dict[str, Tensor]]:
        """Compute (batch, classes) logits and the attention maps of the pass."""
        pass

    def check_inputs(self, inputs: Dict[str, np.ndarray]) -> int:
        shapes = self.input_shapes()
        if set(inputs) != set(shapes):
            raise ShapeMismatchError(f"Expected inputs {sorted(shapes)}, got {sorted(inputs)}.")
        sizes = set()
        for name, shape in shapes.items():
            arr = np.asarray(inputs[name])
            if arr.shape[1:] != shape:
                raise ShapeMismatchError(f"Input '{name}' has per-example shape {arr.shape[1:]}, expected {shape}.")
            if arr.size and (arr.min() < 0 or arr.max() >= self.config.vocab_size):
                raise ShapeMismatchError(f"Input '{name}' has tokens outside the vocabulary of "
                                         f"{self.config.vocab_size}.")
            sizes.add(arr.shape[0])
        if len(sizes) != 1:
            raise ShapeMismatchError(f"Inputs disagree on the number of examples: {sorted(sizes)}.")
        return sizes.pop()

    def check_batch(self, batch: Batch) -> None:
        n = self.check_inputs(batch.inputs)
        if batch.labels.shape != (n,):
            raise ShapeMismatchError(f"Batch has {n} examples but labels of shape {batch.labels.shape}.")

    def loss_graph(self, p: Dict[str, Tensor], batch: Batch) -> Tensor:
        """Mean cross-entropy, plus ½·weight_decay·‖θ‖² when weight decay is set."""
        logits, _ = self.forward(p, batch.inputs)
        loss = cross_entropy_with_logits(logits, batch.labels)
        decay = self.config.weight_decay
        if decay > 0:
            for tensor in p.values():
                loss = loss + (tensor * tensor).sum() * (0.5 * decay)
        return loss

    def predict_logits(self, inputs: Dict[str, np.ndarray]) -> np.ndarray:
        self.check_inputs(inputs)
        with no_grad():
            p = {k: Tensor(v) for k, v in self.param_arrays().items()}
            logits, _ = self.forward(p, inputs)
        return logits.data

    def attention_maps(self, inputs: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
        self.check_inputs(inputs)
        with no_grad():
            p = {k: Tensor(v) for k, v in self.param_arrays().items()}
            _, maps = self.forward(p, inputs)
        return {k: v.data for k, v in maps.items()}

    @staticmethod
    def _attend(x_q: Tensor, x_kv: Tensor, p: Dict[str, Tensor], prefix: str,
                heads: int) -> Tuple[Tensor, Tensor]:
        """Scaled dot-product attention with `heads` heads.

        Args:
            x_q (Tensor): (batch, Tq, D) query-side input.
            x_kv (Tensor): (batch, Tk, D) key/value-side input.
            p (Dict[str, Tensor]): Parameters; uses {prefix}_wq/_bq/_wk/_bk/_wv/_bv.
            prefix (str): Parameter name prefix.
            heads (int): Number of heads; D must be divisible by it.

        Returns:
            Tuple[Tensor, Tensor]: (batch, Tq, D) context and (batch, heads, Tq, Tk) weights."""
        b, tq, d = x_q.shape
        tk, dh = x_kv.shape[1], d // heads

        def split(t: Tensor, n: int) -> Tensor:
            return t.reshape(b, n, heads, dh).permute(0, 2, 1, 3)

        q = split(linear(x_q, p[f"{prefix}_wq"], p[f"{prefix}_bq"]), tq)
        k = split(linear(x_kv, p[f"{prefix}_wk"], p[f"{prefix}_bk"]), tk)
        v = split(linear(x_kv, p[f"{prefix}_wv"], p[f"{prefix}_bv"]), tk)
        weights = softmax((q @ k.swap_last()) * (1.0 / np.sqrt(dh)))
        context = (weights @ v).permute(0, 2, 1, 3).reshape(b, tq, d)
        return context, weights

    @staticmethod
    def _projection_specs(prefix: str, d: int, groups: Dict[str, str]) -> List[ParamSpec]:
        """Specs for {prefix}_w{q,k,v} and biases, grouped per projection."""
        specs = []
        for part in ("q", "k", "v"):
            group = groups[part]
            specs.append(ParamSpec(f"{prefix}_w{part}", (d, d), group, d))
            specs.append(ParamSpec(f"{prefix}_b{part}", (d,), group, d))
        return specs
