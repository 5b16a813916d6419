import numpy as np
import pytest

from models.config import EstimatorConfig, InterventionConfig, OptimizerConfig, PerturbationSpec
from models.reports import CurvatureVerdict
from services.attention_diagnose.commons import constants as C
from services.attention_diagnose.commons.errors import InvalidConfigError, UnknownGroupError
from services.attention_diagnose.diagnosis.curvature import (
    CONCAVE, CONVEX, FLAT, classify_curvature, curvature_table, render_curvature_table, spectral_report
)
from services.attention_diagnose.diagnosis.interaction import interaction_report, rank_couplings
from services.attention_diagnose.diagnosis.intervention import run_intervention
from services.attention_diagnose.harness.perturbation import summarize_sweep, sweep
from services.attention_diagnose.models.engineered import EngineeredQuadraticClient, block_quadratic
from services.attention_diagnose.spectral.interaction import interaction_matrix
from tests.conftest import engineered_data


@pytest.mark.parametrize("group,trace,eigs_min,eigs_max,label", C.REFERENCE_CURVATURE_ROWS)
def test_reference_rows_are_reproduced(group, trace, eigs_min, eigs_max, label):
    assert classify_curvature(trace, eigs_min, eigs_max) == label


def test_flat_and_threshold_cases():
    assert classify_curvature(0.0, 0.0, 0.0) == FLAT
    assert classify_curvature(1e-6, -1.0, 1.0) == FLAT
    assert classify_curvature(-2e-6, 0.0, 0.0, flat_eps=1e-6) == CONCAVE
    assert classify_curvature(0.5, -0.3, 0.4, flat_eps=1.0) == FLAT


def test_verdict_label_must_follow_from_trace():
    with pytest.raises(ValueError):
        CurvatureVerdict(group="g", trace=2.86, eigs_min=-0.0007, eigs_max=0.0387, label=CONCAVE, flat_eps=1e-6)


def test_engineered_blocks_get_expected_verdicts(empty_batch):
    model = block_quadratic({"word_attention": -np.eye(3), "sentence_attention": 2 * np.eye(4)})
    verdicts = curvature_table(model, empty_batch)
    assert [v.group for v in verdicts] == ["word_attention", "sentence_attention"]
    assert [v.trace for v in verdicts] == pytest.approx([-3.0, 8.0], abs=1e-12)
    assert [v.label for v in verdicts] == [CONCAVE, CONVEX]
    assert (verdicts[0].eigs_min, verdicts[0].eigs_max) == pytest.approx((-1.0, -1.0), abs=1e-12)
    assert verdicts[1].report.spectrum == pytest.approx([2.0] * 4, abs=1e-12)


def test_hierarchical_table_has_two_rows(han, han_batch):
    verdicts = curvature_table(han, han_batch)
    assert [v.group for v in verdicts] == list(C.HIERARCHICAL_GROUPS)
    for v in verdicts:
        assert v.report.mode == "dense" and v.report.probes_used == v.report.dim
        assert v.eigs_min <= v.eigs_max
        assert v.grad_norm >= 0.0


def test_table_does_not_depend_on_group_order(tiny_model, tiny_batch):
    names = tiny_model.registry.names
    forward = {v.group: v for v in curvature_table(tiny_model, tiny_batch, names)}
    backward = {v.group: v for v in curvature_table(tiny_model, tiny_batch, names[::-1])}
    assert forward == backward


def test_estimator_mode_agrees_with_dense_mode(empty_batch):
    rng = np.random.default_rng(0)
    m = rng.normal(size=(30, 30)) * 0.1
    blocks = {"word_attention": 0.5 * (m + m.T) - 2 * np.eye(30), "sentence_attention": np.diag(np.linspace(1, 3, 25))}
    model = block_quadratic(blocks)
    dense = curvature_table(model, empty_batch, config=EstimatorConfig(mode="dense"))
    estimated = curvature_table(model, empty_batch,
                                config=EstimatorConfig(mode="estimator", hutchinson_probes=512, probe_seed=1))
    assert [v.label for v in dense] == [v.label for v in estimated]
    for d, e in zip(dense, estimated):
        assert e.report.mode == "estimator" and e.report.converged
        assert e.eigs_min == pytest.approx(d.eigs_min, abs=1e-6)
        assert e.eigs_max == pytest.approx(d.eigs_max, abs=1e-6)


def test_single_parameter_group_uses_dense_path(empty_batch):
    model = block_quadratic({"word_attention": np.array([[4.0]]), "sentence_attention": np.eye(2)})
    report = spectral_report(model, empty_batch, "word_attention", EstimatorConfig(mode="estimator"))
    assert report.mode == "dense" and report.trace == pytest.approx(4.0)


def test_unknown_group_is_named(han, han_batch):
    with pytest.raises(UnknownGroupError, match="pixel_attention"):
        curvature_table(han, han_batch, ["word_attention", "pixel_attention"])


def test_rendered_table_layout(empty_batch):
    model = block_quadratic({"word_attention": -np.eye(3), "sentence_attention": 2 * np.eye(4)})
    text = render_curvature_table(curvature_table(model, empty_batch))
    for column in ("Layer", "H.Trace", "Extreme Eigenvalues", "Interpretation", "Grad Norm"):
        assert column in text
    assert "Concave; fragile" in text and "Convex; stable" in text
    assert "-3.0000" in text and "(2.0000, 2.0000)" in text


def test_top_coupling_of_engineered_instance(empty_batch):
    eye = np.eye(2)
    model = block_quadratic({"word_attention": eye, "sentence_attention": eye}, {(1, 2): -0.68})
    matrix, report = interaction_report(model, empty_batch, [[0], [1], [2], [3]], ["W1", "W2", "S1", "S2"])
    assert (report.top.a, report.top.b) == ("W2", "S1")
    assert report.top.normalized == pytest.approx(-0.68, abs=1e-9)
    assert len(report.couplings) == 4
    assert all(c.normalized == 0.0 for c in report.couplings[1:])


def test_block_diagonal_hessian_has_no_cross_coupling(empty_batch):
    model = block_quadratic({"word_attention": np.diag([1.0, 2.0]), "sentence_attention": np.diag([3.0, 4.0])})
    _, report = interaction_report(model, empty_batch, [[0], [1], [2], [3]])
    assert all(c.raw == 0.0 and c.normalized == 0.0 for c in report.couplings)


def test_ranking_matches_exhaustive_enumeration(empty_batch):
    rng = np.random.default_rng(5)
    m = rng.normal(size=(6, 6))
    model = EngineeredQuadraticClient(0.5 * (m + m.T) + 6 * np.eye(6), {"word_attention": 3, "sentence_attention": 3})
    matrix = interaction_matrix(model, empty_batch, [[i] for i in range(6)])
    ranked = rank_couplings(matrix)
    cross = [(abs(matrix.normalized[i, j]), i, j) for i in range(3) for j in range(3, 6)]
    expected = [(f"s{i}", f"s{j}") for _, i, j in sorted(cross, key=lambda t: -t[0])]
    assert [(c.a, c.b) for c in ranked] == expected
    assert abs(ranked[0].normalized) == max(c[0] for c in cross)


def _coupled_model() -> EngineeredQuadraticClient:
    # L = ½|θ|² + ½κ(ws)², coupling 2κws / √((1 + κs²)(1 + κw²))
    return EngineeredQuadraticClient(np.eye(2), {"word_attention": 1, "sentence_attention": 1},
                                     bottlenecks=[(0, 1, 0.5)], theta=np.ones(2))


def _run_coupled(lr_scale: float, epochs: int):
    model = _coupled_model()
    config = InterventionConfig(target_group="word_attention", lr_scale=lr_scale, retrain_epochs=epochs)
    opt = OptimizerConfig(epochs=0, batch_size=8, learning_rate=0.2, shuffle_seed=0)
    report = run_intervention(model, engineered_data(), config, opt, engineered_data().batch(), [[0], [1]],
                              ["w", "s"], ["word_attention", "sentence_attention"])
    return model, report


def test_intervention_reduces_engineered_coupling():
    model, report = _run_coupled(0.1, 5)
    assert report.coupling_before == pytest.approx(1.0 / 1.5, abs=1e-12)
    assert abs(report.coupling_after) < abs(report.coupling_before)
    assert report.tracked_pair == ["w", "s"] and report.target_group == "word_attention"
    assert not report.incomplete
    np.testing.assert_array_equal(model.params, np.ones(2))


def test_neutral_intervention_changes_nothing(han, han_splits, han_batch):
    groups = list(C.HIERARCHICAL_GROUPS)
    selection = [han.registry.indices(g) for g in groups]
    config = InterventionConfig(lr_scale=1.0, retrain_epochs=0, reference_alpha=0.5, reference_seed=2)
    report = run_intervention(han, han_splits.train, config, OptimizerConfig(shuffle_seed=0), han_batch, selection,
                              groups, groups, han_splits.test)
    assert report.coupling_after == report.coupling_before
    assert report.variability_after == report.variability_before
    assert report.target_group == "word_attention"


def test_intervention_rejects_unknown_tracked_label():
    model = _coupled_model()
    config = InterventionConfig(tracked_pair=("w", "q"))
    with pytest.raises(InvalidConfigError):
        run_intervention(model, engineered_data(), config, OptimizerConfig(), engineered_data().batch(),
                         [[0], [1]], ["w", "s"], ["word_attention", "sentence_attention"])


def test_divergent_retraining_yields_incomplete_report():
    model = _coupled_model()
    config = InterventionConfig(target_group="sentence_attention", lr_scale=1.0, retrain_epochs=200)
    opt = OptimizerConfig(learning_rate=1e3, batch_size=8, shuffle_seed=0)
    report = run_intervention(model, engineered_data(), config, opt, engineered_data().batch(), [[0], [1]],
                              ["w", "s"], ["word_attention", "sentence_attention"])
    assert report.incomplete and report.coupling_after is None
    assert "diverged" in report.detail


def test_fragile_group_is_more_sensitive_than_control(empty_batch):
    model = block_quadratic({"word_attention": np.diag([-5.0, -5.0, 1.0]), "sentence_attention": 0.5 * np.eye(3)})
    labels = {v.group: v.label for v in curvature_table(model, empty_batch)}
    assert labels == {"word_attention": CONCAVE, "sentence_attention": CONVEX}

    alphas = [0.01, 0.05, 0.1]
    rows = {}
    for i, group in enumerate(("word_attention", "sentence_attention")):
        spec = PerturbationSpec(group=group, alphas=alphas, trials_per_alpha=200, noise_seed=10 + i)
        rows[group] = summarize_sweep(sweep(model, empty_batch, spec))
    for alpha, fragile, control in zip(alphas, rows["word_attention"], rows["sentence_attention"]):
        assert fragile.alpha == control.alpha == alpha
        assert fragile.mean_abs_delta > control.mean_abs_delta
        assert fragile.mean_delta < 0 < control.mean_delta
