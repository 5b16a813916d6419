import io
import logging
from typing import List, Optional, Sequence

import numpy as np
from rich import box
from rich.console import Console
from rich.table import Table

from models.config import EstimatorConfig
from models.reports import CurvatureVerdict, SpectralReport

from ..autodiff.graph import Batch, HessianOperator
from ..base.base_models import DiagnosableModel
from ..commons.constants import FLAT_EPS
from ..commons.errors import DiagnosisError
from ..commons.norms import gradient_norm
from ..spectral.dense import dense_hessian, exact_spectrum
from ..spectral.hutchinson import hutchinson_trace, prefers_dense
from ..spectral.lanczos import lanczos_extreme
from ..spectral.operators import group_restricted_hvp

logger = logging.getLogger(__name__)

CONVEX = "convex-stable"
CONCAVE = "concave-fragile"
FLAT = "degenerate-flat"

_INTERPRETATION = {
    CONVEX: "Convex; stable",
    CONCAVE: "Concave; fragile",
    FLAT: "Flat; degenerate",
}


def classify_curvature(trace: float, eigs_min: float, eigs_max: float, flat_eps: float = FLAT_EPS) -> str:
    """Label a group from the sign of its Hessian trace.

    The extreme eigenvalues do not enter the rule: a slightly negative minimum
    eigenvalue under a positive trace is still convex-stable."""
    if abs(trace) <= flat_eps:
        return FLAT
    return CONCAVE if trace < 0 else CONVEX


def spectral_report(model: DiagnosableModel, batch: Batch, group: str, config: EstimatorConfig,
                    diagnostic_batch: str = "", operator: Optional[HessianOperator] = None,
                    progress: bool = False) -> SpectralReport:
    """Trace and extreme eigenvalues of one group's Hessian block.

    Args:
        model (DiagnosableModel): Model at its current parameters.
        batch (Batch): Diagnostic batch.
        group (str): Registry group name.
        config (EstimatorConfig): Mode, dense limit, probes, Lanczos settings.
        diagnostic_batch (str, optional): Batch identifier recorded in the report.
        operator (Optional[HessianOperator]): Reusable operator at the same point.
        progress (bool, optional): Show progress bars. Defaults to False.

    Returns:
        SpectralReport: Dense-exact or estimated metrics."""
    idx = model.registry.indices(group)
    op = group_restricted_hvp(model, batch, idx, operator)
    seed = config.probe_seed or 0
    if prefers_dense(config.mode, op.dim, config.dense_limit):
        matrix = dense_hessian(op, progress=progress).matrix
        spectrum = exact_spectrum(matrix)
        return SpectralReport(group=group, dim=op.dim, mode="dense", trace=float(np.trace(matrix)),
                              trace_stderr=0.0, eigs_min=float(spectrum[0]), eigs_max=float(spectrum[-1]),
                              probes_used=op.dim, lanczos_iters=0, converged=True, probe_seed=seed,
                              diagnostic_batch=diagnostic_batch, spectrum=spectrum.tolist())
    trace, stderr = hutchinson_trace(op, config.hutchinson_probes, seed, progress=progress)
    lanczos = lanczos_extreme(op, config.lanczos_max_iters, config.lanczos_tol, seed)
    return SpectralReport(group=group, dim=op.dim, mode="estimator", trace=trace, trace_stderr=stderr,
                          eigs_min=lanczos.eigs_min, eigs_max=lanczos.eigs_max,
                          probes_used=config.hutchinson_probes, lanczos_iters=lanczos.iters,
                          converged=lanczos.converged, probe_seed=seed, diagnostic_batch=diagnostic_batch)


def curvature_table(model: DiagnosableModel, batch: Batch, groups: Optional[Sequence[str]] = None,
                    config: Optional[EstimatorConfig] = None, diagnostic_batch: str = "",
                    progress: bool = False) -> List[CurvatureVerdict]:
    """One verdict per group, in the order given (all registry groups by default)."""
    config = config or EstimatorConfig()
    groups = model.registry.require(model.registry.names if groups is None else groups)
    operator = HessianOperator(model.graph, model.params, batch)
    verdicts = []
    for group in groups:
        try:
            report = spectral_report(model, batch, group, config, diagnostic_batch, operator, progress)
        except DiagnosisError:
            logger.error("curvature estimation failed for group '%s'", group)
            raise
        verdicts.append(CurvatureVerdict(
            group=group, trace=report.trace, eigs_min=report.eigs_min, eigs_max=report.eigs_max,
            label=classify_curvature(report.trace, report.eigs_min, report.eigs_max, config.flat_eps),
            flat_eps=config.flat_eps, grad_norm=gradient_norm(operator.gradient, model.registry.indices(group)),
            report=report,
        ))
        logger.info("group %s: trace=%.6g eigs=(%.6g, %.6g) -> %s", group, report.trace, report.eigs_min,
                    report.eigs_max, verdicts[-1].label)
    return verdicts


def render_curvature_table(verdicts: Sequence[CurvatureVerdict], width: int = 100) -> str:
    """Aligned plain-text table with the columns Layer, H.Trace, Extreme Eigenvalues, Interpretation, Grad Norm."""
    table = Table(box=box.ASCII, show_lines=False)
    for name, justify in (("Layer", "left"), ("H.Trace", "right"), ("Extreme Eigenvalues", "right"),
                          ("Interpretation", "left"), ("Grad Norm", "right")):
        table.add_column(name, justify=justify, no_wrap=True)
    for v in verdicts:
        table.add_row(v.group, f"{v.trace:.4f}", f"({v.eigs_min:.4f}, {v.eigs_max:.4f})",
                      _INTERPRETATION[v.label], "-" if v.grad_norm is None else f"{v.grad_norm:.4f}")
    buffer = io.StringIO()
    Console(file=buffer, width=width, color_system=None, force_terminal=False).print(table)
    return buffer.getvalue()
