import numpy as np
import pytest

from models.config import DataSpec, ModelConfig
from services.attention_diagnose.autodiff.graph import Batch
from services.attention_diagnose.commons.functions import build_model
from services.attention_diagnose.loaders.dataset_loader import Dataset, gen_dataset

TINY_CONFIGS = {
    "hierarchical": ModelConfig(kind="hierarchical", vocab_size=8, embed_dim=4, classes=2,
                                sents_per_doc=2, words_per_sent=3, init_seed=11),
    "selfattn": ModelConfig(kind="selfattn", vocab_size=8, embed_dim=4, heads=2, classes=3, seq_len=4,
                            init_seed=12),
    "crossattn": ModelConfig(kind="crossattn", vocab_size=8, embed_dim=4, heads=2, classes=2, seq_len=3,
                             seq_len_b=4, init_seed=13),
}


def tiny_splits(kind: str, n_train: int = 16, n_test: int = 8, seed: int = 5):
    return gen_dataset(DataSpec(n_train=n_train, n_test=n_test).matching(TINY_CONFIGS[kind]), seed)


def engineered_data(n: int = 8) -> Dataset:
    """Placeholder split for models whose loss ignores the batch."""
    return Dataset({"x": np.zeros((n, 1), dtype=np.int64)}, np.zeros(n, dtype=np.int64), kind="engineered")


@pytest.fixture(params=sorted(TINY_CONFIGS))
def kind(request) -> str:
    return request.param


@pytest.fixture
def tiny_model(kind):
    return build_model(TINY_CONFIGS[kind])


@pytest.fixture
def tiny_batch(kind) -> Batch:
    return tiny_splits(kind).train.batch(np.arange(6))


@pytest.fixture
def han():
    return build_model(TINY_CONFIGS["hierarchical"])


@pytest.fixture
def han_splits():
    return tiny_splits("hierarchical")


@pytest.fixture
def han_batch(han_splits) -> Batch:
    return han_splits.train.batch(np.arange(6))


@pytest.fixture
def empty_batch() -> Batch:
    return engineered_data(1).batch()
