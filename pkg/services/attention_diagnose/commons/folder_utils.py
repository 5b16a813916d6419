import os
from pathlib import Path

from .constants import _DEFAULT_OUTPUT, _HESSFLOW_HOME


def get_hessflow_home() -> str:
    """Get the directory relative to which run outputs are placed.

    Returns:
        str: Value of HESSFLOW_HOME, or the current working directory."""
    return str(os.getenv(_HESSFLOW_HOME, str(Path.cwd())))


def resolve_output(output_dir: str = _DEFAULT_OUTPUT) -> Path:
    path = Path(output_dir)
    return path if path.is_absolute() else Path(get_hessflow_home()) / path


def initialize_folder(output_dir: str = _DEFAULT_OUTPUT) -> Path:
    """Create the output directory of a run if it does not exist.

    Args:
        output_dir (str, optional): Absolute path, or path relative to the HessFlow home.

    Returns:
        Path: The resolved output directory."""
    path = resolve_output(output_dir)
    if not path.exists():
        os.makedirs(path, exist_ok=True)
    return path
