import json
from pathlib import Path
from typing import Union

import numpy as np

from models.config import ModelConfig
from models.reports import CheckpointHeader

from ..base.base_models import AttentionModelBase
from ..commons.constants import CHECKPOINT_FORMAT
from ..commons.errors import InvalidConfigError, MissingArtifactError
from ..commons.functions import build_model


def save_checkpoint(model: AttentionModelBase, path: Union[str, Path]) -> Path:
    """Write a JSON header line followed by the parameters as little-endian float64.

    Args:
        model (AttentionModelBase): Model built from a ModelConfig.
        path (Union[str, Path]): Destination file.

    Returns:
        Path: The written file."""
    path = Path(path)
    header = CheckpointHeader(format=CHECKPOINT_FORMAT, config=model.config.model_dump(mode="json"),
                              registry=model.registry.to_dict(), dim=model.dim)
    payload = json.dumps(header.model_dump(mode="json"), sort_keys=True).encode("utf-8")
    path.write_bytes(payload + b"\n" + np.ascontiguousarray(model.params, dtype="<f8").tobytes())
    return path


def load_checkpoint(path: Union[str, Path]) -> AttentionModelBase:
    """Rebuild a model from a checkpoint, checking dimension and group layout.

    Raises:
        MissingArtifactError: If the file does not exist.
        InvalidConfigError: If the header or payload does not match the rebuilt model."""
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError([path.name])
    raw = path.read_bytes()
    cut = raw.find(b"\n")
    if cut < 0:
        raise InvalidConfigError(f"Checkpoint {path} has no header line.")
    header = CheckpointHeader.model_validate_json(raw[:cut])
    if header.format != CHECKPOINT_FORMAT:
        raise InvalidConfigError(f"Unsupported checkpoint format '{header.format}'.")
    config = ModelConfig.model_validate(header.config)
    params = np.frombuffer(raw[cut + 1:], dtype="<f8")
    if params.shape[0] != header.dim:
        raise InvalidConfigError(f"Checkpoint holds {params.shape[0]} values, header announces {header.dim}.")
    model = build_model(config, params.astype(np.float64))
    if model.registry.to_dict() != header.registry:
        raise InvalidConfigError("Checkpoint group registry does not match the model built from its config.")
    return model
