import csv
import io
import logging
import math
from pathlib import Path
from typing import List, Sequence, Type, TypeVar, Union

from pydantic import BaseModel

from ..commons.errors import MissingArtifactError

logger = logging.getLogger(__name__)

M = TypeVar("M", bound=BaseModel)
PathLike = Union[str, Path]


def write_json(report: BaseModel, path: PathLike) -> Path:
    """Validate and write a report as indented JSON."""
    path = Path(path)
    type(report).model_validate(report.model_dump())
    path.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logger.debug("wrote %s", path)
    return path


def read_json(schema: Type[M], path: PathLike) -> M:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError([path.name])
    return schema.model_validate_json(path.read_text(encoding="utf-8"))


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def _columns(schema: Type[BaseModel], rows: Sequence[BaseModel]) -> List[str]:
    columns = []
    for name, field in schema.model_fields.items():
        if field.annotation is not None and "Dict" in str(field.annotation):
            keys = sorted({k for r in rows for k in (getattr(r, name) or {})})
            columns.extend(f"{name}:{k}" for k in keys)
        else:
            columns.append(name)
    return columns


def write_csv(rows: Sequence[M], schema: Type[M], path: PathLike) -> Path:
    """Write rows with a header; floats use their shortest round-trip decimal, NaN an empty cell.

    Dict-valued fields are spread over "<field>:<key>" columns."""
    path = Path(path)
    columns = _columns(schema, rows)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        schema.model_validate(row.model_dump())
        cells = []
        for col in columns:
            name, _, key = col.partition(":")
            value = getattr(row, name)
            cells.append(_cell((value or {}).get(key) if key else value))
        writer.writerow(cells)
    path.write_text(buffer.getvalue(), encoding="utf-8")
    return path


def read_csv(schema: Type[M], path: PathLike) -> List[M]:
    """Parse a CSV written by `write_csv` back into validated rows.

    An empty cell is None, or NaN for a plain float field."""
    path = Path(path)
    nan_fields = {name for name, field in schema.model_fields.items() if field.annotation is float}
    if not path.exists():
        raise MissingArtifactError([path.name])
    rows = []
    with path.open(newline="", encoding="utf-8") as f:
        for record in csv.DictReader(f):
            data = {}
            for col, text in record.items():
                name, _, key = col.partition(":")
                value = None if text == "" else text
                if key:
                    if value is not None:
                        data.setdefault(name, {})[key] = value
                else:
                    data[name] = float("nan") if value is None and name in nan_fields else value
            rows.append(schema.model_validate(data))
    return rows
