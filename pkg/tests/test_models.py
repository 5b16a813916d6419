import numpy as np
import pytest
from pydantic import ValidationError

from models.config import DataSpec, EstimatorConfig, InjectionConfig, ModelConfig, OptimizerConfig
from services.attention_diagnose.autodiff.graph import forward
from services.attention_diagnose.base.base_models import GroupRegistry
from services.attention_diagnose.commons import constants as C
from services.attention_diagnose.commons.errors import (
    DivergenceError, InvalidConfigError, MissingArtifactError, UnknownGroupError
)
from services.attention_diagnose.commons.functions import accuracy, build_model, predict
from services.attention_diagnose.loaders.checkpoint_loader import load_checkpoint, save_checkpoint
from services.attention_diagnose.loaders.dataset_loader import (
    diagnostic_batch, gen_dataset, load_dataset, save_dataset
)
from services.attention_diagnose.models.engineered import EngineeredQuadraticClient, block_quadratic
from services.attention_diagnose.training.trainer import train
from tests.conftest import TINY_CONFIGS, engineered_data, tiny_splits
from tests.oracles import bag_of_words_baseline

EXPECTED_GROUPS = {
    "hierarchical": list(C.HIERARCHICAL_GROUPS),
    "selfattn": list(C.SELFATTN_GROUPS),
    "crossattn": list(C.CROSSATTN_GROUPS),
}


def test_registry_names_attention_groups(tiny_model, kind):
    assert tiny_model.registry.names == EXPECTED_GROUPS[kind]


def test_registry_partition_covers_every_parameter_once(tiny_model):
    parts = tiny_model.registry.partition()
    assert C.OTHER_GROUP in parts
    merged = np.sort(np.concatenate(list(parts.values())))
    np.testing.assert_array_equal(merged, np.arange(tiny_model.dim))
    for name, idx in parts.items():
        assert all(tiny_model.registry.tag_of(int(i)) == name for i in idx)


def test_registry_rejects_overlaps_and_unknown_names():
    with pytest.raises(InvalidConfigError):
        GroupRegistry(4, {"a": [0, 1], "b": [1, 2]})
    with pytest.raises(InvalidConfigError):
        GroupRegistry(4, {"a": [0, 4]})
    with pytest.raises(UnknownGroupError) as err:
        GroupRegistry(4, {"a": [0]}).require(["a", "b"])
    assert err.value.names == ["b"]


def test_build_model_is_deterministic(kind):
    a, b = build_model(TINY_CONFIGS[kind]), build_model(TINY_CONFIGS[kind])
    np.testing.assert_array_equal(a.params, b.params)
    other = build_model(TINY_CONFIGS[kind].model_copy(update={"init_seed": 99}))
    assert not np.array_equal(a.params, other.params)


def test_build_model_rejects_unknown_kind():
    config = ModelConfig.model_construct(kind="recurrent", classes=2)
    with pytest.raises(InvalidConfigError, match="unimplemented model kind"):
        build_model(config)


def test_heads_must_divide_embedding():
    with pytest.raises(ValidationError):
        ModelConfig(kind="selfattn", embed_dim=6, heads=4, classes=2)


def test_parameter_count_is_bounded():
    with pytest.raises(InvalidConfigError):
        build_model(ModelConfig(kind="selfattn", vocab_size=4000, embed_dim=8, classes=2))


def test_attention_rows_are_distributions(tiny_model, tiny_batch):
    maps = tiny_model.attention_maps(tiny_batch.inputs)
    assert maps
    for weights in maps.values():
        assert np.all(weights >= 0)
        np.testing.assert_allclose(weights.sum(axis=-1), 1.0, atol=1e-9)


def test_predict_breaks_ties_toward_lowest_class(tiny_model, tiny_batch):
    params = tiny_model.params.copy()
    for name in ("cls_w", "cls_b"):
        params[tiny_model.graph.offsets[name]] = 0.0
    flat = tiny_model.clone(params)
    np.testing.assert_array_equal(predict(flat, tiny_batch.inputs), np.zeros(len(tiny_batch), dtype=np.int64))


def test_dataset_is_deterministic_and_disjoint(kind):
    first, second = tiny_splits(kind), tiny_splits(kind)
    for a, b in zip(first, second):
        assert a.fingerprint() == b.fingerprint()
    train, test = first

    def rows(data):
        return {b"".join(data.inputs[k][i].tobytes() for k in sorted(data.inputs)) for i in range(len(data))}

    assert not rows(train) & rows(test)
    assert train.labels.max() < train.classes
    assert tiny_splits(kind, seed=6).train.fingerprint() != train.fingerprint()


def test_dataset_rejects_vocabulary_without_noise_tokens():
    spec = DataSpec(vocab_size=3).matching(TINY_CONFIGS["hierarchical"])
    with pytest.raises(InvalidConfigError):
        gen_dataset(spec, 0)


def test_labels_are_recoverable_from_token_counts(kind):
    config = TINY_CONFIGS[kind]
    train, test = gen_dataset(DataSpec().matching(config), 3)
    predicted = bag_of_words_baseline(train.inputs, train.labels, test.inputs, config.vocab_size, config.classes)
    assert np.mean(predicted == test.labels) >= 0.9


def test_diagnostic_batch_is_a_fixed_subset(han_splits):
    batch, ident = diagnostic_batch(han_splits.train, 5, 9)
    again, same = diagnostic_batch(han_splits.train, 5, 9)
    assert ident == same and ident.startswith("train:9:5:")
    np.testing.assert_array_equal(batch.labels, again.labels)
    assert len(batch) == 5


def test_dataset_file_round_trip(tmp_path, han_splits):
    path = save_dataset(han_splits.test, tmp_path / "test.jsonl")
    loaded = load_dataset(path)
    assert loaded.fingerprint() == han_splits.test.fingerprint()
    assert (loaded.split, loaded.kind, loaded.classes) == ("test", "hierarchical", 2)


def test_checkpoint_round_trip(tmp_path, tiny_model):
    path = save_checkpoint(tiny_model, tmp_path / C.CHECKPOINT_FILE)
    loaded = load_checkpoint(path)
    assert loaded.config == tiny_model.config
    np.testing.assert_array_equal(loaded.params, tiny_model.params)


def test_checkpoint_errors(tmp_path, han):
    with pytest.raises(MissingArtifactError):
        load_checkpoint(tmp_path / "absent.bin")
    path = save_checkpoint(han, tmp_path / C.CHECKPOINT_FILE)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(InvalidConfigError):
        load_checkpoint(path)


def test_zero_learning_rate_leaves_parameters(han, han_splits):
    before = han.params.copy()
    trace = train(han, han_splits.train, OptimizerConfig(epochs=2, batch_size=8, learning_rate=0.0, shuffle_seed=0))
    np.testing.assert_array_equal(han.params, before)
    assert len(trace.epochs) == 2


def test_frozen_group_is_never_updated(han, han_splits):
    before = han.params.copy()
    frozen = han.registry.indices("word_attention")
    train(han, han_splits.train, OptimizerConfig(epochs=2, batch_size=8, learning_rate=0.5, shuffle_seed=0,
                                                 group_lr_scale={"word_attention": 0.0}))
    np.testing.assert_array_equal(han.params[frozen], before[frozen])
    assert not np.array_equal(han.params, before)


def test_training_reduces_loss_and_is_reproducible(han_splits):
    opt = OptimizerConfig(epochs=15, batch_size=8, learning_rate=0.5, shuffle_seed=3)
    model = build_model(TINY_CONFIGS["hierarchical"])
    start = forward(model.graph, model.params, han_splits.train.batch())
    trace = train(model, han_splits.train, opt)
    assert trace.epochs[-1].loss < start
    assert 0.0 <= trace.epochs[-1].accuracy <= 1.0
    assert accuracy(model, han_splits.train.inputs, han_splits.train.labels) == trace.epochs[-1].accuracy

    replay = build_model(TINY_CONFIGS["hierarchical"])
    train(replay, han_splits.train, opt)
    np.testing.assert_array_equal(replay.params, model.params)


@pytest.fixture(scope="module")
def overfit_han():
    splits = tiny_splits("hierarchical", n_train=32)
    model = build_model(TINY_CONFIGS["hierarchical"])
    trace = train(model, splits.train, OptimizerConfig(epochs=300, batch_size=8, learning_rate=0.5, shuffle_seed=0))
    return model, splits.train, trace


def test_training_fits_the_small_synthetic_set(overfit_han):
    _, data, trace = overfit_han
    assert len(data) == 32
    assert trace.epochs[-1].accuracy >= 0.95


def test_memorized_train_set_predicts_its_labels(overfit_han):
    model, data, _ = overfit_han
    np.testing.assert_array_equal(predict(model, data.inputs), data.labels)


def test_curvature_monitoring_records_group_traces(han, han_splits, han_batch):
    opt = OptimizerConfig(epochs=1, batch_size=8, learning_rate=0.1, shuffle_seed=0, monitor_curvature=True)
    trace = train(han, han_splits.train, opt, han_batch)
    assert set(trace.epochs[0].group_traces) == set(C.HIERARCHICAL_GROUPS)


def test_curvature_monitoring_estimates_groups_above_the_dense_guard(empty_batch):
    model = block_quadratic({"word_attention": np.eye(2100), "sentence_attention": 3.0 * np.eye(2)})
    opt = OptimizerConfig(epochs=1, batch_size=8, learning_rate=0.1, shuffle_seed=0, monitor_curvature=True)
    trace = train(model, engineered_data(), opt, empty_batch, estimators=EstimatorConfig(hutchinson_probes=4))
    # Rademacher probes give the exact trace of the identity
    assert trace.epochs[0].group_traces == pytest.approx({"word_attention": 2100.0, "sentence_attention": 6.0})


def test_injection_changes_only_its_group():
    model = EngineeredQuadraticClient(np.eye(4), {"a": 2, "b": 2}, theta=np.ones(4))
    opt = OptimizerConfig(epochs=1, batch_size=8, learning_rate=0.0, shuffle_seed=0,
                          injection=InjectionConfig(group="a", alpha=0.1, seed=4))
    trace = train(model, engineered_data(), opt)
    assert trace.epochs[0].accuracy is None
    assert not np.array_equal(model.params[:2], np.ones(2))
    np.testing.assert_array_equal(model.params[2:], np.ones(2))


def test_divergence_names_epoch_and_batch():
    model = EngineeredQuadraticClient(np.eye(2), {"a": 1, "b": 1}, theta=np.ones(2))
    opt = OptimizerConfig(epochs=100, batch_size=8, learning_rate=1e6, shuffle_seed=0)
    with pytest.raises(DivergenceError) as err:
        train(model, engineered_data(), opt)
    assert err.value.epoch > 0
    assert f"epoch {err.value.epoch}" in str(err.value)
