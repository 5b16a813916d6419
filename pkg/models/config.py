from typing import Dict, List, Literal, Optional, Tuple

from pydantic import (
    BaseModel, ConfigDict, Field, NonNegativeFloat, NonNegativeInt, PositiveInt, field_validator,
    model_validator
)

from services.attention_diagnose.commons import constants as C

ModelKind = Literal["hierarchical", "selfattn", "crossattn"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelConfig(_Strict):
    """Architecture and initialization of one toy attention model."""
    kind: ModelKind = "hierarchical"
    vocab_size: PositiveInt = 16
    embed_dim: PositiveInt = 8
    heads: PositiveInt = 2
    classes: PositiveInt
    seq_len: PositiveInt = 6
    seq_len_b: Optional[PositiveInt] = None
    sents_per_doc: PositiveInt = 3
    words_per_sent: PositiveInt = 4
    init_seed: NonNegativeInt = 0
    weight_decay: NonNegativeFloat = 0.0

    @model_validator(mode="after")
    def _heads_divide_embedding(self) -> "ModelConfig":
        if self.kind != "hierarchical" and self.embed_dim % self.heads:
            raise ValueError(f"embed_dim ({self.embed_dim}) must be divisible by heads ({self.heads}).")
        return self

    @property
    def stream_b_len(self) -> int:
        return self.seq_len_b or self.seq_len


class DataSpec(_Strict):
    """Synthetic classification data; shape fields default to the model's."""
    kind: Optional[ModelKind] = None
    classes: Optional[PositiveInt] = None
    vocab_size: Optional[PositiveInt] = None
    seq_len: Optional[PositiveInt] = None
    seq_len_b: Optional[PositiveInt] = None
    sents_per_doc: Optional[PositiveInt] = None
    words_per_sent: Optional[PositiveInt] = None
    n_train: PositiveInt = 64
    n_test: PositiveInt = 32
    signal_tokens: PositiveInt = 1

    def matching(self, model: ModelConfig) -> "DataSpec":
        """Fill unset shape fields from a model configuration."""
        update = {name: getattr(model, name) for name in
                  ("kind", "classes", "vocab_size", "seq_len", "sents_per_doc", "words_per_sent")
                  if getattr(self, name) is None}
        if self.seq_len_b is None:
            update["seq_len_b"] = model.stream_b_len
        return self.model_copy(update=update)


class InjectionConfig(_Strict):
    """Gaussian noise added to one group after every SGD step."""
    group: str
    alpha: NonNegativeFloat
    seed: NonNegativeInt = 0


class OptimizerConfig(_Strict):
    """Plain SGD with optional per-group learning-rate scale factors."""
    epochs: NonNegativeInt = 40
    batch_size: PositiveInt = 16
    learning_rate: NonNegativeFloat = 0.5
    group_lr_scale: Dict[str, NonNegativeFloat] = Field(default_factory=dict)
    shuffle_seed: Optional[NonNegativeInt] = None
    injection: Optional[InjectionConfig] = None
    monitor_curvature: bool = False


class EstimatorConfig(_Strict):
    """Curvature estimator settings."""
    mode: Literal["auto", "dense", "estimator"] = "auto"
    dense_limit: PositiveInt = C.DENSE_LIMIT
    hutchinson_probes: PositiveInt = C.HUTCHINSON_PROBES
    lanczos_max_iters: int = Field(C.LANCZOS_MAX_ITERS, ge=2)
    lanczos_tol: float = Field(C.LANCZOS_TOL, gt=0)
    flat_eps: NonNegativeFloat = C.FLAT_EPS
    diagnostic_batch_size: PositiveInt = 16
    probe_seed: Optional[NonNegativeInt] = None


class PerturbationSpec(_Strict):
    """α-sweep of Gaussian perturbations restricted to one group."""
    group: str
    alphas: List[NonNegativeFloat] = Field(default_factory=lambda: list(C.DEFAULT_ALPHAS))
    trials_per_alpha: PositiveInt = 8
    noise_seed: Optional[NonNegativeInt] = None
    track_curvature: bool = False

    @field_validator("alphas")
    @classmethod
    def _ascending(cls, alphas: List[float]) -> List[float]:
        if not alphas:
            raise ValueError("alphas must not be empty.")
        if any(b < a for a, b in zip(alphas, alphas[1:])):
            raise ValueError("alphas must be in ascending order.")
        return alphas


class ParameterRef(_Strict):
    """One parameter, addressed by group and position inside the group."""
    group: str
    index: NonNegativeInt
    label: Optional[str] = None


class SelectionConfig(_Strict):
    """Which parameters or groups enter the interaction analysis.

    With neither `groups` nor `parameters` set, the largest-|H_ii| heuristic
    picks `per_group` parameters from every attention group."""
    groups: Optional[List[str]] = None
    parameters: Optional[List[ParameterRef]] = None
    per_group: PositiveInt = 2
    mode: Literal["raw", "normalized"] = "normalized"

    @model_validator(mode="after")
    def _one_kind(self) -> "SelectionConfig":
        if self.groups is not None and self.parameters is not None:
            raise ValueError("Set either selection.groups or selection.parameters, not both.")
        return self


class InterventionConfig(_Strict):
    """Per-group learning-rate intervention."""
    target_group: Optional[str] = None
    lr_scale: float = Field(0.1, gt=0.0, le=1.0)
    retrain_epochs: NonNegativeInt = 10
    reference_alpha: NonNegativeFloat = 0.05
    reference_seed: NonNegativeInt = 0
    tracked_pair: Optional[Tuple[str, str]] = None


class Seeds(_Strict):
    init: NonNegativeInt = 0
    data: NonNegativeInt = 1
    noise: NonNegativeInt = 2
    probe: NonNegativeInt = 3
    shuffle: NonNegativeInt = 4


class RunConfig(_Strict):
    """Everything that determines a run; `seeds` is the single source of seeds."""
    model: ModelConfig = Field(default_factory=lambda: ModelConfig(classes=2))
    data: DataSpec = Field(default_factory=DataSpec)
    train: OptimizerConfig = Field(default_factory=OptimizerConfig)
    estimators: EstimatorConfig = Field(default_factory=EstimatorConfig)
    perturbation: List[PerturbationSpec] = Field(default_factory=list)
    selection: SelectionConfig = Field(default_factory=SelectionConfig)
    intervention: InterventionConfig = Field(default_factory=InterventionConfig)
    seeds: Seeds = Field(default_factory=Seeds)
    output_dir: str = C._DEFAULT_OUTPUT

    @model_validator(mode="after")
    def _propagate_seeds(self) -> "RunConfig":
        self.model = self.model.model_copy(update={"init_seed": self.seeds.init})
        self.data = self.data.matching(self.model)
        if self.train.shuffle_seed is None:
            self.train = self.train.model_copy(update={"shuffle_seed": self.seeds.shuffle})
        if self.estimators.probe_seed is None:
            self.estimators = self.estimators.model_copy(update={"probe_seed": self.seeds.probe})
        self.perturbation = [
            p if p.noise_seed is not None else p.model_copy(update={"noise_seed": self.seeds.noise + i})
            for i, p in enumerate(self.perturbation)
        ]
        return self
