import numpy as np
import pytest

from services.attention_diagnose.autodiff.graph import HessianOperator
from services.attention_diagnose.commons.errors import (
    DimensionGuardError, NonFiniteError, NotSymmetricError, OverlappingSelectionError, ShapeMismatchError
)
from services.attention_diagnose.commons.functions import build_model
from services.attention_diagnose.models.engineered import EngineeredQuadraticClient, block_quadratic
from services.attention_diagnose.spectral.dense import dense_hessian, exact_spectrum, tridiagonalize
from services.attention_diagnose.spectral.hutchinson import group_trace, hutchinson_trace, prefers_dense
from services.attention_diagnose.spectral.interaction import default_selection, interaction_matrix
from services.attention_diagnose.spectral.lanczos import lanczos_extreme
from services.attention_diagnose.spectral.operators import (
    HvpClosure, asymmetry, full_hvp, group_restricted_hvp
)
from tests.conftest import TINY_CONFIGS
from tests.oracles import bisection_eigenvalues


def _random_symmetric(n: int, seed: int, shift: float = 0.0) -> np.ndarray:
    m = np.random.default_rng(seed).normal(size=(n, n))
    return 0.5 * (m + m.T) + shift * np.eye(n)


def test_closure_checks_shape_and_finiteness():
    op = HvpClosure.from_matrix(np.eye(3))
    with pytest.raises(ShapeMismatchError):
        op(np.ones(4))
    with pytest.raises(NonFiniteError):
        HvpClosure(2, lambda v: v * np.inf)(np.ones(2))


def test_hutchinson_identity_is_exact():
    trace, stderr = hutchinson_trace(HvpClosure.from_matrix(np.eye(7)), probes=5, seed=0)
    assert trace == 7.0 and stderr == 0.0


def test_hutchinson_diagonal_within_three_standard_errors():
    trace, stderr = hutchinson_trace(HvpClosure.from_matrix(np.diag(np.arange(1.0, 11.0))), probes=64, seed=1)
    assert abs(trace - 55.0) <= 3 * stderr + 1e-12


def test_hutchinson_random_matrix_within_two_percent():
    a = _random_symmetric(50, 7, shift=5.0)
    trace, _ = hutchinson_trace(HvpClosure.from_matrix(a), probes=4096, seed=2)
    assert abs(trace - np.trace(a)) <= 0.02 * abs(np.trace(a))


def test_hutchinson_is_unbiased_over_seeds():
    a = _random_symmetric(12, 3, shift=1.0)
    op = HvpClosure.from_matrix(a)
    estimates = np.array([hutchinson_trace(op, probes=8, seed=s)[0] for s in range(300)])
    stderr = estimates.std(ddof=1) / np.sqrt(estimates.size)
    assert abs(estimates.mean() - np.trace(a)) <= 4 * stderr


def test_hutchinson_workers_give_identical_result():
    op = HvpClosure.from_matrix(_random_symmetric(20, 4))
    assert hutchinson_trace(op, 100, 5, workers=1) == hutchinson_trace(op, 100, 5, workers=4)


def test_hutchinson_needs_a_probe():
    with pytest.raises(ValueError):
        hutchinson_trace(HvpClosure.from_matrix(np.eye(2)), probes=0, seed=0)


def test_lanczos_diagonal_spectrum():
    result = lanczos_extreme(HvpClosure.from_matrix(np.diag(np.arange(1.0, 11.0))), seed=3)
    assert abs(result.eigs_min - 1.0) <= 1e-8
    assert abs(result.eigs_max - 10.0) <= 1e-8
    assert result.converged


def test_lanczos_identity_stops_after_two_iterations():
    result = lanczos_extreme(HvpClosure.from_matrix(np.eye(6)), seed=0)
    assert (result.eigs_min, result.eigs_max) == pytest.approx((1.0, 1.0), abs=1e-12)
    assert result.iters <= 2 and result.converged


def test_lanczos_random_matrix_matches_dense_eigensolver():
    a = _random_symmetric(200, 11)
    result = lanczos_extreme(HvpClosure.from_matrix(a), max_iters=200, seed=4)
    truth = np.linalg.eigvalsh(a)
    scale = np.max(np.abs(truth))
    assert abs(result.eigs_min - truth[0]) <= 1e-6 * scale
    assert abs(result.eigs_max - truth[-1]) <= 1e-6 * scale
    assert result.eigs_min >= truth[0] - 1e-8 * scale
    assert result.eigs_max <= truth[-1] + 1e-8 * scale


def test_lanczos_reports_non_convergence():
    result = lanczos_extreme(HvpClosure.from_matrix(_random_symmetric(200, 12)), max_iters=5, seed=0)
    assert not result.converged and result.iters == 5


def test_lanczos_preconditions():
    with pytest.raises(ValueError):
        lanczos_extreme(HvpClosure.from_matrix(np.eye(1)))
    with pytest.raises(ValueError):
        lanczos_extreme(HvpClosure.from_matrix(np.eye(3)), max_iters=1)


def test_lanczos_matches_dense_on_every_attention_group(tiny_model, tiny_batch):
    operator = HessianOperator(tiny_model.graph, tiny_model.params, tiny_batch)
    for name in tiny_model.registry.names:
        op = group_restricted_hvp(tiny_model, tiny_batch, tiny_model.registry.indices(name), operator)
        truth = exact_spectrum(dense_hessian(op).matrix)
        result = lanczos_extreme(op, max_iters=200, tol=1e-8, seed=0)
        scale = max(1.0, np.max(np.abs(truth)))
        assert result.iters <= 200
        assert abs(result.eigs_min - truth[0]) <= 1e-6 * scale, name
        assert abs(result.eigs_max - truth[-1]) <= 1e-6 * scale, name


def _decayed(kind: str, decay: float = 1.0):
    return build_model(TINY_CONFIGS[kind].model_copy(update={"weight_decay": decay}))


def test_weight_decay_shifts_every_group_block_by_the_identity(kind, tiny_batch):
    plain, decayed = build_model(TINY_CONFIGS[kind]), _decayed(kind, 0.7)
    for name in plain.registry.names:
        idx = plain.registry.indices(name)
        base = dense_hessian(group_restricted_hvp(plain, tiny_batch, idx)).matrix
        shifted = dense_hessian(group_restricted_hvp(decayed, tiny_batch, idx)).matrix
        np.testing.assert_allclose(shifted - base, 0.7 * np.eye(idx.size), rtol=0, atol=1e-10, err_msg=name)


def test_hutchinson_matches_dense_on_every_attention_group(kind, tiny_batch):
    model = _decayed(kind)
    operator = HessianOperator(model.graph, model.params, tiny_batch)
    for name in model.registry.names:
        op = group_restricted_hvp(model, tiny_batch, model.registry.indices(name), operator)
        exact = np.trace(dense_hessian(op).matrix)
        trace, _ = hutchinson_trace(op, probes=4096, seed=1)
        assert abs(trace - exact) <= 0.02 * abs(exact), name


def test_hutchinson_stderr_shrinks_with_more_probes():
    op = HvpClosure.from_matrix(_random_symmetric(50, 8))
    _, few = hutchinson_trace(op, probes=256, seed=2)
    _, many = hutchinson_trace(op, probes=1024, seed=2)
    assert many < 0.75 * few


def test_group_trace_switches_to_the_estimator_above_the_dense_limit():
    a = _random_symmetric(30, 9, shift=4.0)
    op = HvpClosure.from_matrix(a)
    assert prefers_dense("auto", 30, 30) and not prefers_dense("auto", 31, 30)
    assert prefers_dense("estimator", 1, 30) and prefers_dense("dense", 5000, 30)
    assert group_trace(op, "auto", 30, 64, 3) == pytest.approx(np.trace(a), abs=1e-10)
    assert group_trace(op, "auto", 10, 64, 3) == hutchinson_trace(op, 64, 3)[0]


def test_dense_hessian_recovers_quadratic():
    a = _random_symmetric(8, 5)
    model = EngineeredQuadraticClient(a, {"a": 3, "b": 5})
    dense = dense_hessian(full_hvp(model, None))
    np.testing.assert_allclose(dense.matrix, a, rtol=0, atol=1e-10)


def test_autodiff_hessian_is_nearly_symmetric(han, han_batch):
    op = full_hvp(han, han_batch)
    dense = dense_hessian(op)
    assert dense.asymmetry <= 1e-8 * max(1.0, np.linalg.norm(dense.matrix))
    assert asymmetry(op, seed=1) <= 1e-8


def test_dense_hessian_guard():
    with pytest.raises(DimensionGuardError):
        dense_hessian(HvpClosure.from_matrix(np.eye(5)), guard=4)


def test_exact_spectrum_small_cases():
    np.testing.assert_array_equal(exact_spectrum(np.array([[3.0]])), [3.0])
    np.testing.assert_allclose(exact_spectrum(np.diag([4.0, -1.0, 2.0])), [-1.0, 2.0, 4.0], atol=1e-14)
    np.testing.assert_allclose(exact_spectrum(np.array([[2.0, 1.0], [1.0, 2.0]])), [1.0, 3.0], atol=1e-14)
    assert exact_spectrum(np.zeros((0, 0))).size == 0


def test_exact_spectrum_sums_to_trace():
    a = _random_symmetric(40, 6, shift=2.0)
    spectrum = exact_spectrum(a)
    assert np.all(np.diff(spectrum) >= 0)
    assert abs(spectrum.sum() - np.trace(a)) <= 1e-8 * max(1.0, abs(np.trace(a)))


def test_exact_spectrum_matches_bisection():
    a = _random_symmetric(100, 8)
    d, e = tridiagonalize(a)
    np.testing.assert_allclose(np.linalg.eigvalsh(np.diag(d) + np.diag(e, 1) + np.diag(e, -1)),
                               np.linalg.eigvalsh(a), atol=1e-9)
    np.testing.assert_allclose(exact_spectrum(a), bisection_eigenvalues(d, e), atol=1e-9)


def test_exact_spectrum_rejects_bad_input():
    with pytest.raises(NotSymmetricError):
        exact_spectrum(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(NotSymmetricError):
        exact_spectrum(np.ones((2, 3)))
    with pytest.raises(DimensionGuardError):
        exact_spectrum(np.eye(3), guard=2)


def test_group_blocks_match_full_hessian(tiny_model, tiny_batch):
    operator = HessianOperator(tiny_model.graph, tiny_model.params, tiny_batch)
    full = dense_hessian(full_hvp(tiny_model, tiny_batch, operator)).matrix
    total = 0.0
    for name, idx in tiny_model.registry.partition().items():
        block = dense_hessian(group_restricted_hvp(tiny_model, tiny_batch, idx, operator)).matrix
        np.testing.assert_allclose(block, full[np.ix_(idx, idx)], rtol=0, atol=1e-10)
        total += np.trace(block)
    assert abs(total - np.trace(full)) <= 1e-8 * max(1.0, abs(np.trace(full)))


def test_group_restricted_hvp_rejects_empty_and_out_of_range(han, han_batch):
    with pytest.raises(ValueError):
        group_restricted_hvp(han, han_batch, [])
    with pytest.raises(IndexError):
        group_restricted_hvp(han, han_batch, [han.dim])


def _table_two_instance():
    eye = np.eye(2)
    return block_quadratic({"word_attention": eye, "sentence_attention": eye}, {(1, 2): -0.68})


def test_singleton_couplings_are_hessian_entries():
    model = _table_two_instance()
    matrix = interaction_matrix(model, None, [[0], [1], [2], [3]], labels=["W1", "W2", "S1", "S2"])
    assert matrix.raw[1, 2] == pytest.approx(-0.68, abs=1e-12)
    assert matrix.normalized[1, 2] == pytest.approx(-0.68, abs=1e-9)
    assert matrix.normalized[0, 3] == 0.0
    assert np.all(np.isnan(np.diag(matrix.normalized)))
    np.testing.assert_array_equal(matrix.raw, matrix.raw.T)
    assert matrix.groups == ["word_attention", "word_attention", "sentence_attention", "sentence_attention"]
    assert matrix.to_model().normalized[0][0] is None


def test_two_by_two_coupling_is_one_half():
    model = EngineeredQuadraticClient(np.array([[2.0, 1.0], [1.0, 2.0]]), {"a": 1, "b": 1})
    matrix = interaction_matrix(model, None, [[0], [1]])
    np.testing.assert_allclose(matrix.raw, [[2.0, 1.0], [1.0, 2.0]], rtol=0, atol=1e-12)
    assert matrix.normalized[0, 1] == pytest.approx(0.5, abs=1e-9)
    assert matrix.normalized[1, 0] == matrix.normalized[0, 1]


def test_group_couplings_keep_the_sign_of_the_peak_entry():
    eye = np.eye(2)
    model = block_quadratic({"word_attention": eye, "sentence_attention": eye}, {(0, 2): 0.3, (1, 3): -0.5})
    matrix = interaction_matrix(model, None, [model.registry.indices("word_attention"),
                                              model.registry.indices("sentence_attention")])
    assert matrix.raw[0, 1] == pytest.approx(-0.5, abs=1e-12)
    assert matrix.raw[0, 0] == pytest.approx(1.0, abs=1e-12)
    assert matrix.normalized[0, 1] == pytest.approx(-0.5, abs=1e-9)


def test_normalized_couplings_are_clamped():
    model = block_quadratic({"a": np.eye(1) * 1e-3, "b": np.eye(1) * 1e-3}, {(0, 1): 5.0})
    matrix = interaction_matrix(model, None, [[0], [1]])
    assert matrix.normalized[0, 1] == 1.0


def test_interaction_selection_errors():
    model = _table_two_instance()
    with pytest.raises(OverlappingSelectionError):
        interaction_matrix(model, None, [[0, 1], [1, 2]])
    with pytest.raises(DimensionGuardError):
        interaction_matrix(model, None, [[0, 1], [2, 3]], guard=3)
    with pytest.raises(ValueError):
        interaction_matrix(model, None, [[0], []])


def test_default_selection_picks_largest_diagonal():
    model = block_quadratic({"word_attention": np.diag([0.1, -3.0, 2.0]), "sentence_attention": np.diag([1.0, 1.0])})
    sets, labels, owners = default_selection(model, None, model.registry.names, per_group=2)
    assert labels == ["word_attention[1]", "word_attention[2]", "sentence_attention[0]", "sentence_attention[1]"]
    assert [int(s[0]) for s in sets] == [1, 2, 3, 4]
    assert owners == ["word_attention", "word_attention", "sentence_attention", "sentence_attention"]
