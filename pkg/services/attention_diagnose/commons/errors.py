from typing import Iterable, List, Optional


class DiagnosisError(Exception):
    """Base class for every error raised by the diagnosis engine."""


class ShapeMismatchError(DiagnosisError, ValueError):
    """Raised when tensors, batches or flat vectors disagree on shape."""


class InvalidConfigError(DiagnosisError, ValueError):
    """Raised when a configuration violates one of its constraints."""


class DimensionGuardError(DiagnosisError, ValueError):
    """Raised when a dense computation would exceed the dimension guard."""


class OverlappingSelectionError(DiagnosisError, ValueError):
    """Raised when interaction selections share parameter indices."""


class NotSymmetricError(DiagnosisError, ValueError):
    """Raised when a matrix handed to a symmetric solver is not symmetric."""


class NonFiniteError(DiagnosisError, ArithmeticError):
    """Raised when a node of the computation produces NaN or infinity.

    Attributes:
        node_id (Optional[int]): Id of the first offending node, if recorded.
        op (str): Name of the operation that produced the value."""
    def __init__(self, op: str, node_id: Optional[int] = None, detail: str = "") -> None:
        self.op, self.node_id = op, node_id
        where = f"node {node_id} ({op})" if node_id is not None else op
        super().__init__(f"Non-finite value produced at {where}. {detail}".strip())


class UnknownGroupError(DiagnosisError, KeyError):
    """Raised when a parameter group name is not part of a model registry."""
    def __init__(self, names: Iterable[str], known: Iterable[str]) -> None:
        self.names: List[str] = list(names)
        self.known: List[str] = list(known)
        super().__init__(f"Unknown parameter group(s) {self.names}. "
                         f"Known groups are {self.known}.")

    def __str__(self) -> str:
        return self.args[0]


class DivergenceError(DiagnosisError, ArithmeticError):
    """Raised when training produces a non-finite loss.

    Attributes:
        epoch (int): Epoch index at which the loss diverged.
        batch (int): Batch index inside that epoch."""
    def __init__(self, epoch: int, batch: int, detail: str = "") -> None:
        self.epoch, self.batch = epoch, batch
        super().__init__(f"Training diverged at epoch {epoch}, batch {batch}. {detail}".strip())


class MissingArtifactError(DiagnosisError, FileNotFoundError):
    """Raised when report files needed by an operation are absent."""
    def __init__(self, missing: Iterable[str]) -> None:
        self.missing: List[str] = list(missing)
        super().__init__(f"Missing artifact(s): {', '.join(self.missing)}. "
                         "Please confirm the producing subcommands were run.")

    def __str__(self) -> str:
        return self.args[0]
