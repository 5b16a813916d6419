from typing import Dict, Optional

import numpy as np

from models.config import ModelConfig

from ..base.base_models import AttentionModelBase, DiagnosableModel
from ..commons.errors import InvalidConfigError
from ..models import attention_models as am


def build_model(config: ModelConfig, params: Optional[np.ndarray] = None) -> AttentionModelBase:
    """Builds the toy attention model described by a configuration.

    Args:
        config (ModelConfig): Model kind, sizes and init seed.
        params (Optional[np.ndarray]): Flat parameters to load instead of initializing.

    Returns:
        AttentionModelBase: Fresh model with a populated group registry."""
    models = {
        "hierarchical": am.HierarchicalAttentionClient,
        "selfattn": am.SelfAttentionClient,
        "crossattn": am.CrossAttentionClient,
    }
    if config.kind not in models:
        raise InvalidConfigError(f"unimplemented model kind - {config.kind}")
    return models[config.kind](config, params)


def predict(model: DiagnosableModel, inputs: Dict[str, np.ndarray]) -> np.ndarray:
    """Argmax class per example; ties go to the lowest class index."""
    return np.argmax(model.predict_logits(inputs), axis=-1).astype(np.int64)


def accuracy(model: DiagnosableModel, inputs: Dict[str, np.ndarray], labels: np.ndarray) -> float:
    return float(np.mean(predict(model, inputs) == labels)) if len(labels) else 0.0
