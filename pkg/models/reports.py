from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, Field, NonNegativeFloat, model_validator

from services.attention_diagnose.commons.constants import SCHEMA_VERSION

CurvatureLabel = Literal["convex-stable", "concave-fragile", "degenerate-flat"]


class _Versioned(BaseModel):
    schema_version: int = SCHEMA_VERSION


class TrainingEpoch(BaseModel):
    """One row of the training trace."""
    epoch: int
    loss: float
    accuracy: Optional[float] = None
    group_traces: Optional[Dict[str, float]] = None


class TrainingTrace(_Versioned):
    learning_rate: float
    group_lr_scale: Dict[str, float]
    shuffle_seed: int
    batch_size: int
    injection: Optional[Dict[str, float]] = None
    epochs: List[TrainingEpoch] = Field(default_factory=list)


class SpectralReport(BaseModel):
    """Curvature metrics of one parameter group on the diagnostic batch."""
    group: str
    dim: int
    mode: Literal["dense", "estimator"]
    trace: float
    trace_stderr: NonNegativeFloat
    eigs_min: float
    eigs_max: float
    probes_used: int = Field(ge=1)
    lanczos_iters: int = Field(ge=0)
    converged: bool = True
    probe_seed: int
    diagnostic_batch: str
    spectrum: Optional[List[float]] = None

    @model_validator(mode="after")
    def _ordered(self) -> "SpectralReport":
        if self.eigs_min > self.eigs_max:
            raise ValueError(f"eigs_min {self.eigs_min} exceeds eigs_max {self.eigs_max}.")
        return self


class CurvatureVerdict(BaseModel):
    """Classification of one group; the label is re-derived on validation."""
    group: str
    trace: float
    eigs_min: float
    eigs_max: float
    label: CurvatureLabel
    flat_eps: NonNegativeFloat
    grad_norm: Optional[float] = None
    report: Optional[SpectralReport] = None

    @model_validator(mode="after")
    def _label_reproduces(self) -> "CurvatureVerdict":
        from services.attention_diagnose.diagnosis.curvature import classify_curvature

        if classify_curvature(self.trace, self.eigs_min, self.eigs_max, self.flat_eps) != self.label:
            raise ValueError(f"Label '{self.label}' does not follow from trace {self.trace}.")
        return self


class CurvatureTable(_Versioned):
    model_kind: str
    diagnostic_batch: str
    estimators: Dict[str, object]
    verdicts: List[CurvatureVerdict]


class InteractionMatrixModel(BaseModel):
    """Serialized interaction matrix; normalized diagonal entries are null."""
    labels: List[str]
    groups: List[str]
    indices: List[List[int]]
    raw: List[List[float]]
    normalized: List[List[Optional[float]]]
    mode: Literal["raw", "normalized"]
    selection_method: str


class Coupling(BaseModel):
    a: str
    b: str
    raw: float
    normalized: float


class InteractionReport(_Versioned):
    diagnostic_batch: str
    matrix: InteractionMatrixModel
    couplings: List[Coupling]
    top: Optional[Coupling] = None


class PerturbationTrial(BaseModel):
    """One (α, seed) perturbation outcome; diverged trials carry a NaN loss."""
    group: str
    alpha: NonNegativeFloat
    trial_seed: int
    loss_base: float
    loss_perturbed: float
    grad_norm_base: float
    grad_norm_perturbed: float
    variability: Optional[float] = Field(None, ge=0.0, le=1.0)
    diverged: bool = False
    trace_base: Optional[float] = None
    trace_perturbed: Optional[float] = None

    @model_validator(mode="after")
    def _baseline_row(self) -> "PerturbationTrial":
        if self.alpha == 0 and (self.loss_perturbed != self.loss_base or self.variability not in (None, 0.0)):
            raise ValueError("A zero-magnitude trial must reproduce the baseline exactly.")
        return self

    @property
    def loss_delta(self) -> float:
        return self.loss_perturbed - self.loss_base


class SweepSummaryRow(BaseModel):
    """Mean loss sensitivity of one group at one α (the loss-vs-α curve)."""
    group: str
    alpha: float
    trials: int
    mean_delta: float
    stderr_delta: float
    mean_abs_delta: float
    mean_variability: Optional[float] = None
    divergences: int = 0


class InterventionReport(_Versioned):
    target_group: str
    lr_scale: float = Field(gt=0.0, le=1.0)
    tracked_pair: List[str]
    coupling_before: float
    coupling_after: Optional[float] = None
    variability_before: Optional[float] = None
    variability_after: Optional[float] = None
    retrain_epochs: int
    reference_alpha: float
    reference_seed: int
    shuffle_seed: int
    diagnostic_batch: str
    incomplete: bool = False
    detail: Optional[str] = None


class RunMetadata(_Versioned):
    """Sidecar file: the only place timestamps live."""
    created_at: str
    command: str
    versions: Dict[str, str]
    seeds: Dict[str, int]
    config: Dict[str, object]


class DatasetHeader(_Versioned):
    """First line of a dataset JSON-lines file."""
    format: str
    split: Literal["train", "test"]
    seed: int
    kind: str
    classes: int
    size: int


class DatasetExample(BaseModel):
    inputs: Dict[str, List]
    label: int = Field(ge=0)


class CheckpointHeader(_Versioned):
    """JSON header line preceding the raw float64 parameters of a checkpoint."""
    format: str
    config: Dict[str, object]
    registry: Dict[str, List[int]]
    dim: int = Field(ge=1)
