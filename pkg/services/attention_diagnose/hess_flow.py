import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Tuple, Union

import numba
import numpy as np
import pydantic

from models.config import DataSpec, ModelConfig, PerturbationSpec, RunConfig
from models.reports import (
    CurvatureTable, InteractionReport, InterventionReport, PerturbationTrial, RunMetadata, TrainingEpoch,
    TrainingTrace
)

from . import __version__
from .autodiff.graph import Batch, HessianOperator, gradient, loss_and_gradient
from .base.base_models import AttentionModelBase
from .commons import constants as C
from .commons import functions as F
from .commons.errors import InvalidConfigError, MissingArtifactError
from .commons.folder_utils import initialize_folder, resolve_output
from .commons.norms import relative_error
from .commons.rng import derive_rng
from .diagnosis.curvature import classify_curvature, curvature_table, render_curvature_table
from .diagnosis.interaction import interaction_report
from .diagnosis.intervention import run_intervention
from .harness.perturbation import summarize_sweep, sweep
from .loaders.checkpoint_loader import load_checkpoint, save_checkpoint
from .loaders.dataset_loader import DatasetSplits, diagnostic_batch, gen_dataset
from .loaders.report_io import read_csv, read_json, write_csv, write_json
from .spectral.interaction import default_selection
from .training import trainer

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class RunContext(NamedTuple):
    """Everything derived from a RunConfig before a command runs."""
    config: RunConfig
    out: Path
    splits: DatasetSplits
    batch: Batch
    batch_id: str


def load_config(path: PathLike) -> RunConfig:
    """Parse and validate a JSON run configuration; validation errors name the field."""
    return RunConfig.model_validate_json(Path(path).read_text(encoding="utf-8"))


def defaults() -> str:
    return RunConfig().model_dump_json(indent=2)


def prepare(config: RunConfig) -> RunContext:
    out = initialize_folder(config.output_dir)
    splits = gen_dataset(config.data, config.seeds.data)
    batch, batch_id = diagnostic_batch(splits.train, config.estimators.diagnostic_batch_size, config.seeds.probe)
    return RunContext(config, out, splits, batch, batch_id)


def write_metadata(ctx: RunContext, command: str) -> Path:
    meta = RunMetadata(
        created_at=datetime.now(timezone.utc).isoformat(), command=command,
        versions={"hessflow": __version__, "numpy": np.__version__, "numba": numba.__version__,
                  "pydantic": pydantic.VERSION},
        seeds=ctx.config.seeds.model_dump(), config=ctx.config.model_dump(mode="json"),
    )
    return write_json(meta, ctx.out / C.METADATA_FILE)


def _model(ctx: RunContext, checkpoint: Optional[PathLike]) -> AttentionModelBase:
    model = load_checkpoint(Path(checkpoint) if checkpoint else ctx.out / C.CHECKPOINT_FILE)
    if model.config != ctx.config.model:
        raise InvalidConfigError("Checkpoint model config differs from the run config. "
                                 "Please confirm both come from the same run.")
    return model


def train(config: RunConfig, progress: bool = False) -> TrainingTrace:
    """Build, train and checkpoint the configured model.

    Args:
        config (RunConfig): Run configuration.
        progress (bool, optional): Show progress bars. Defaults to False.

    Returns:
        TrainingTrace: Per-epoch loss and accuracy."""
    ctx = prepare(config)
    model = F.build_model(config.model)
    trace = trainer.train(model, ctx.splits.train, config.train, ctx.batch, progress, config.estimators)
    save_checkpoint(model, ctx.out / C.CHECKPOINT_FILE)
    write_csv(trace.epochs, TrainingEpoch, ctx.out / C.TRAINING_TRACE_FILE)
    write_metadata(ctx, "train")
    return trace


def curvature(config: RunConfig, checkpoint: Optional[PathLike] = None, progress: bool = False) -> CurvatureTable:
    """Curvature verdict of every attention group, written as JSON and as a text table."""
    ctx = prepare(config)
    model = _model(ctx, checkpoint)
    verdicts = curvature_table(model, ctx.batch, None, config.estimators, ctx.batch_id, progress)
    table = CurvatureTable(model_kind=model.kind, diagnostic_batch=ctx.batch_id,
                           estimators=config.estimators.model_dump(mode="json"), verdicts=verdicts)
    write_json(table, ctx.out / C.CURVATURE_JSON)
    (ctx.out / C.CURVATURE_TEXT).write_text(render_curvature_table(verdicts), encoding="utf-8")
    write_metadata(ctx, "curvature")
    return table


def perturbation_specs(config: RunConfig, model: AttentionModelBase) -> List[PerturbationSpec]:
    """Configured sweeps, or one default sweep per attention group."""
    if config.perturbation:
        model.registry.require(s.group for s in config.perturbation)
        return list(config.perturbation)
    return [PerturbationSpec(group=g, noise_seed=config.seeds.noise + i) for i, g in enumerate(model.registry.names)]


def perturb(config: RunConfig, checkpoint: Optional[PathLike] = None, workers: int = 1,
            progress: bool = False) -> List[PerturbationTrial]:
    ctx = prepare(config)
    model = _model(ctx, checkpoint)
    trials = []
    for spec in perturbation_specs(config, model):
        trials.extend(sweep(model, ctx.batch, spec, ctx.splits.test, workers, progress, config.estimators))
    write_csv(trials, PerturbationTrial, ctx.out / C.TRIALS_CSV)
    write_metadata(ctx, "perturb")
    return trials


def selection_for(config: RunConfig, model: AttentionModelBase,
                  batch: Batch) -> Tuple[List[np.ndarray], List[str], List[str], str]:
    """Index sets, labels, owning groups and provenance of the interaction selection."""
    sel = config.selection
    if sel.groups is not None:
        names = model.registry.require(sel.groups)
        return [model.registry.indices(g) for g in names], list(names), list(names), "groups"
    if sel.parameters is not None:
        model.registry.require(p.group for p in sel.parameters)
        sets, labels, groups = [], [], []
        for ref in sel.parameters:
            idx = model.registry.indices(ref.group)
            if ref.index >= idx.size:
                raise InvalidConfigError(f"Parameter {ref.index} is outside group '{ref.group}' of size {idx.size}.")
            sets.append(idx[[ref.index]])
            labels.append(ref.label or f"{ref.group}[{ref.index}]")
            groups.append(ref.group)
        return sets, labels, groups, "parameters"
    sets, labels, groups = default_selection(model, batch, model.registry.names, sel.per_group)
    return sets, labels, groups, "largest-diagonal heuristic"


def interact(config: RunConfig, checkpoint: Optional[PathLike] = None) -> InteractionReport:
    ctx = prepare(config)
    model = _model(ctx, checkpoint)
    sets, labels, groups, method = selection_for(config, model, ctx.batch)
    _, report = interaction_report(model, ctx.batch, sets, labels, groups, config.selection.mode,
                                   ctx.batch_id, method)
    write_json(report, ctx.out / C.INTERACTION_JSON)
    write_metadata(ctx, "interact")
    return report


def intervene(config: RunConfig, checkpoint: Optional[PathLike] = None, progress: bool = False) -> InterventionReport:
    """Learning-rate intervention; an incomplete report is still written."""
    ctx = prepare(config)
    model = _model(ctx, checkpoint)
    sets, labels, groups, _ = selection_for(config, model, ctx.batch)
    report = run_intervention(model, ctx.splits.train, config.intervention, config.train, ctx.batch, sets,
                              labels, groups, ctx.splits.test, ctx.batch_id, progress)
    write_json(report, ctx.out / C.INTERVENTION_JSON)
    write_metadata(ctx, "intervene")
    return report


def _fmt(value) -> str:
    if value is None:
        return "n/a"
    return repr(float(value)) if isinstance(value, float) else str(value)


def _curvature_section(table: CurvatureTable) -> List[str]:
    lines = [f"Diagnostic batch `{table.diagnostic_batch}`, model `{table.model_kind}`.", "",
             "| Layer | H.Trace | Extreme Eigenvalues | Interpretation | Grad Norm |",
             "|---|---|---|---|---|"]
    for v in table.verdicts:
        lines.append(f"| {v.group} | {_fmt(v.trace)} | ({_fmt(v.eigs_min)}, {_fmt(v.eigs_max)}) "
                     f"| {v.label} | {_fmt(v.grad_norm)} |")
    return lines


def _interaction_section(report: InteractionReport) -> List[str]:
    m = report.matrix
    lines = [f"Selection: {m.selection_method}, mode `{m.mode}`.", "",
             "| | " + " | ".join(m.labels) + " |", "|---" * (len(m.labels) + 1) + "|"]
    values = m.normalized if m.mode == "normalized" else m.raw
    for label, row in zip(m.labels, values):
        lines.append(f"| {label} | " + " | ".join(_fmt(x) for x in row) + " |")
    if report.top is not None:
        lines += ["", f"Strongest coupling: ({report.top.a}, {report.top.b}) normalized "
                      f"{_fmt(report.top.normalized)}, raw {_fmt(report.top.raw)}."]
    return lines


def _sweep_section(trials: List[PerturbationTrial]) -> List[str]:
    lines = ["| Group | alpha | trials | mean delta | stderr | mean abs delta | variability | diverged |",
             "|---|---|---|---|---|---|---|---|"]
    for r in summarize_sweep(trials):
        lines.append(f"| {r.group} | {_fmt(r.alpha)} | {r.trials} | {_fmt(r.mean_delta)} | {_fmt(r.stderr_delta)} "
                     f"| {_fmt(r.mean_abs_delta)} | {_fmt(r.mean_variability)} | {r.divergences} |")
    return lines


def _intervention_section(report: InterventionReport) -> List[str]:
    lines = [f"Target `{report.target_group}` at lr-scale {_fmt(report.lr_scale)} for "
             f"{report.retrain_epochs} epochs; tracked pair ({', '.join(report.tracked_pair)}).", "",
             "| | before | after |", "|---|---|---|",
             f"| coupling | {_fmt(report.coupling_before)} | {_fmt(report.coupling_after)} |",
             f"| variability | {_fmt(report.variability_before)} | {_fmt(report.variability_after)} |"]
    if report.incomplete:
        lines += ["", f"**Incomplete:** {report.detail}"]
    return lines


def report(output_dir: PathLike) -> str:
    """Assemble the curvature, interaction, sweep and intervention files of a run into summary.md.

    Numbers are copied from the source files. A missing file yields a "not run"
    marker for its section.

    Raises:
        MissingArtifactError: If none of the report files exist."""
    out = resolve_output(str(output_dir))
    sections = [
        ("Curvature", C.CURVATURE_JSON, lambda p: _curvature_section(read_json(CurvatureTable, p))),
        ("Interactions", C.INTERACTION_JSON, lambda p: _interaction_section(read_json(InteractionReport, p))),
        ("Perturbation sweeps", C.TRIALS_CSV, lambda p: _sweep_section(read_csv(PerturbationTrial, p))),
        ("Intervention", C.INTERVENTION_JSON, lambda p: _intervention_section(read_json(InterventionReport, p))),
    ]
    missing = [name for _, name, _ in sections if not (out / name).exists()]
    if len(missing) == len(sections):
        raise MissingArtifactError(missing)
    lines = ["# HessFlow summary"]
    for title, name, render in sections:
        lines += ["", f"## {title}", ""]
        lines += [f"_not run_ (missing `{name}`)"] if name in missing else render(out / name)
    text = "\n".join(lines) + "\n"
    (out / C.SUMMARY_FILE).write_text(text, encoding="utf-8")
    return text


_SELFTEST_MODELS = (
    ModelConfig(kind="hierarchical", vocab_size=8, embed_dim=4, classes=2, sents_per_doc=2, words_per_sent=3),
    ModelConfig(kind="selfattn", vocab_size=8, embed_dim=4, heads=2, classes=2, seq_len=4),
    ModelConfig(kind="crossattn", vocab_size=8, embed_dim=4, heads=2, classes=2, seq_len=3, seq_len_b=4),
)


def _finite_difference_checks(model: AttentionModelBase, batch: Batch) -> Dict[str, float]:
    rng = derive_rng(0, 7)
    theta = model.params
    g = gradient(model.graph, theta, batch)
    fd = np.empty(model.dim)
    for i in range(model.dim):
        e = np.zeros(model.dim)
        e[i] = 1e-5
        fd[i] = (loss_and_gradient(model.graph, theta + e, batch)[0]
                 - loss_and_gradient(model.graph, theta - e, batch)[0]) / 2e-5
    op = HessianOperator(model.graph, theta, batch)
    u, v = rng.standard_normal(model.dim), rng.standard_normal(model.dim)
    hv = op(v)
    fd_hv = (gradient(model.graph, theta + 1e-4 * v, batch) - gradient(model.graph, theta - 1e-4 * v, batch)) / 2e-4
    a, b = float(op(u) @ v), float(u @ hv)
    return {"gradient": relative_error(g, fd), "hvp": relative_error(hv, fd_hv),
            "symmetry": abs(a - b) / max(abs(a), abs(b), 1e-300)}


def selftest() -> Dict[str, bool]:
    """Finite-difference gradient/HVP checks on every model kind plus the reference curvature rows."""
    results = {}
    for cfg in _SELFTEST_MODELS:
        model = F.build_model(cfg)
        data = gen_dataset(DataSpec(n_train=8, n_test=4).matching(cfg), 0).train
        errors = _finite_difference_checks(model, data.batch())
        results[f"{cfg.kind}.gradient"] = errors["gradient"] <= 1e-5
        results[f"{cfg.kind}.hvp"] = errors["hvp"] <= 1e-4
        results[f"{cfg.kind}.symmetry"] = errors["symmetry"] <= 1e-8
        logger.info("selftest %s: %s", cfg.kind, errors)
    results["reference_curvature_rows"] = all(
        classify_curvature(trace, lo, hi) == label for _, trace, lo, hi, label in C.REFERENCE_CURVATURE_ROWS)
    return results
