import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, NamedTuple, Optional, Set, Tuple, Union

import numpy as np

from models.config import DataSpec
from models.reports import DatasetExample, DatasetHeader

from ..autodiff.graph import Batch
from ..commons.constants import DATASET_FORMAT
from ..commons.errors import InvalidConfigError
from ..commons.rng import derive_rng

_MAX_REJECTIONS = 10_000


@dataclass(frozen=True)
class Dataset:
    """Immutable labelled examples; `inputs` maps input names to (n, ...) token arrays."""
    inputs: Dict[str, np.ndarray]
    labels: np.ndarray
    split: str = "train"
    seed: int = 0
    kind: str = "hierarchical"
    classes: int = 2

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def batch(self, indices: Optional[np.ndarray] = None) -> Batch:
        if indices is None:
            return Batch(dict(self.inputs), self.labels)
        indices = np.asarray(indices, dtype=np.int64)
        return Batch({k: v[indices] for k, v in self.inputs.items()}, self.labels[indices])

    def fingerprint(self, indices: Optional[np.ndarray] = None) -> str:
        """sha256 over the bytes of the selected examples (inputs in name order, then labels)."""
        b = self.batch(indices)
        h = hashlib.sha256()
        for name in sorted(b.inputs):
            h.update(np.ascontiguousarray(b.inputs[name], dtype="<i8").tobytes())
        h.update(np.ascontiguousarray(b.labels, dtype="<i8").tobytes())
        return h.hexdigest()


class DatasetSplits(NamedTuple):
    train: Dataset
    test: Dataset


def input_shapes(spec: DataSpec) -> Dict[str, Tuple[int, ...]]:
    if spec.kind == "hierarchical":
        return {"tokens": (spec.sents_per_doc, spec.words_per_sent)}
    if spec.kind == "selfattn":
        return {"tokens": (spec.seq_len,)}
    if spec.kind == "crossattn":
        return {"tokens_a": (spec.seq_len,), "tokens_b": (spec.seq_len_b or spec.seq_len,)}
    raise InvalidConfigError(f"unimplemented dataset kind - {spec.kind}")


def _check_spec(spec: DataSpec) -> Dict[str, Tuple[int, ...]]:
    missing = [f for f in ("kind", "classes", "vocab_size") if getattr(spec, f) is None]
    if missing:
        raise InvalidConfigError(f"Dataset spec is missing {missing}. Please confirm it was matched to a model.")
    if spec.vocab_size < spec.classes + 2:
        raise InvalidConfigError(f"vocab_size ({spec.vocab_size}) must exceed classes ({spec.classes}) by at "
                                 "least 2 so that noise tokens exist.")
    shapes = input_shapes(spec)
    for name, shape in shapes.items():
        if spec.signal_tokens > int(np.prod(shape)):
            raise InvalidConfigError(f"signal_tokens ({spec.signal_tokens}) exceeds the {int(np.prod(shape))} "
                                     f"positions of input '{name}'.")
    return shapes


def _example(rng: np.random.Generator, spec: DataSpec, shapes: Dict[str, Tuple[int, ...]],
             label: int) -> Dict[str, np.ndarray]:
    # token c marks class c, tokens >= classes are noise
    out = {}
    for name, shape in shapes.items():
        grid = rng.integers(spec.classes, spec.vocab_size, size=shape)
        flat = grid.reshape(-1)
        flat[rng.choice(flat.size, size=spec.signal_tokens, replace=False)] = label
        out[name] = grid
    return out


def _key(example: Dict[str, np.ndarray]) -> bytes:
    return b"".join(example[name].astype("<i8").tobytes() for name in sorted(example))


def _draw(spec: DataSpec, seed: int, split: str, n: int, shapes, exclude: Set[bytes]) -> Dataset:
    rng = derive_rng(seed, 0 if split == "train" else 1)
    labels = rng.permutation(np.arange(n) % spec.classes)
    rows = {name: np.empty((n, *shape), dtype=np.int64) for name, shape in shapes.items()}
    for i, label in enumerate(labels):
        for _ in range(_MAX_REJECTIONS):
            example = _example(rng, spec, shapes, int(label))
            if _key(example) not in exclude:
                break
        else:
            raise InvalidConfigError("Could not draw a test example disjoint from the train split. "
                                     "Please confirm the vocabulary and sequence lengths are large enough.")
        if split == "train":
            exclude.add(_key(example))
        for name in shapes:
            rows[name][i] = example[name]
    return Dataset(rows, labels.astype(np.int64), split, seed, spec.kind, spec.classes)


def gen_dataset(spec: DataSpec, seed: int) -> DatasetSplits:
    """Generate synthetic train and test splits whose labels are carried by signal tokens.

    Every example is noise tokens from [classes, vocab_size) with
    `signal_tokens` positions replaced by the class token; two-stream examples
    carry the signal in both streams. Test examples never repeat a train example.

    Args:
        spec (DataSpec): Shape and size of the data, matched to a model.
        seed (int): Generation seed.

    Returns:
        DatasetSplits: (train, test)."""
    shapes = _check_spec(spec)
    seen: Set[bytes] = set()
    train = _draw(spec, seed, "train", spec.n_train, shapes, seen)
    test = _draw(spec, seed, "test", spec.n_test, shapes, seen)
    return DatasetSplits(train, test)


def save_dataset(dataset: Dataset, path: Union[str, Path]) -> Path:
    """Write a dataset as JSON lines: a header line, then one example per line."""
    path = Path(path)
    header = DatasetHeader(format=DATASET_FORMAT, split=dataset.split, seed=dataset.seed,
                           kind=dataset.kind, classes=dataset.classes, size=len(dataset))
    lines = [header.model_dump_json()]
    for i in range(len(dataset)):
        example = DatasetExample(inputs={k: v[i].tolist() for k, v in dataset.inputs.items()},
                                 label=int(dataset.labels[i]))
        lines.append(example.model_dump_json())
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_dataset(path: Union[str, Path]) -> Dataset:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise InvalidConfigError(f"Dataset file {path} is empty.")
    header = DatasetHeader.model_validate_json(lines[0])
    if header.format != DATASET_FORMAT:
        raise InvalidConfigError(f"Unsupported dataset format '{header.format}'.")
    examples = [DatasetExample.model_validate_json(line) for line in lines[1:] if line.strip()]
    if len(examples) != header.size:
        raise InvalidConfigError(f"Dataset header announces {header.size} examples, found {len(examples)}.")
    names = sorted(examples[0].inputs) if examples else []
    inputs = {n: np.asarray([e.inputs[n] for e in examples], dtype=np.int64) for n in names}
    labels = np.asarray([e.label for e in examples], dtype=np.int64)
    if labels.size and labels.max() >= header.classes:
        raise InvalidConfigError(f"Labels must lie in [0, {header.classes}).")
    return Dataset(inputs, labels, header.split, header.seed, header.kind, header.classes)


def diagnostic_batch(data: Dataset, size: int, seed: int) -> Tuple[Batch, str]:
    """Fixed seeded subset of a split on which every Hessian quantity is evaluated.

    Returns:
        Tuple[Batch, str]: The batch and its identifier "<split>:<seed>:<size>:<sha256 prefix>"."""
    size = min(int(size), len(data))
    indices = np.sort(derive_rng(seed, 0xD1A6).choice(len(data), size=size, replace=False))
    return data.batch(indices), f"{data.split}:{seed}:{size}:{data.fingerprint(indices)[:16]}"
