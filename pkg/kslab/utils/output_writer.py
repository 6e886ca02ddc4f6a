import csv
import json
import logging
import math
from dataclasses import asdict, fields as dataclass_fields, is_dataclass
from pathlib import Path
from typing import Any, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from kslab.errors import DomainError
from kslab.models import DiagnosticsRecord, RadialField, RadialGrid

FIELD_COLUMNS = ("r", "value")
MASS_CURVE_COLUMNS = ("gamma", "M", "R")
SHOOTING_COLUMNS = ("r", "f", "fprime")


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    value = float(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return format(value, ".17g")


def format_row(values: Iterable[Any]) -> str:
    return ",".join(format_value(v) for v in values)


def _to_dict(record: Any) -> dict:
    if hasattr(record, "to_dict"):
        return record.to_dict()
    if is_dataclass(record):
        return asdict(record)
    return dict(record)


def _to_row(record: Any, columns: Sequence[str]) -> Tuple[Any, ...]:
    if is_dataclass(record):
        return tuple(getattr(record, name) for name in columns)
    return tuple(record)


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        handle.write(",".join(columns) + "\n")
        for row in rows:
            handle.write(format_row(row) + "\n")
    return path


def write_json(payload: Any, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_outputs(records: Sequence[Any], fmt: str, path: Path,
                  columns: Optional[Sequence[str]] = None) -> Path:
    """Write dataclass records (or plain rows with ``columns``) as CSV or a sorted-key JSON list."""
    records = list(records)
    if fmt == "csv":
        if columns is None:
            if not records or not is_dataclass(records[0]):
                raise DomainError("columns are required for empty or non-dataclass records")
            columns = [f.name for f in dataclass_fields(records[0])]
        written = write_csv(path, columns, (_to_row(r, columns) for r in records))
    elif fmt == "json":
        written = write_json([_to_dict(r) for r in records], path)
    else:
        raise DomainError(f"unknown output format '{fmt}'")
    logging.info(f"Wrote {len(records)} records to {written}")
    return written


def read_csv(path: Path) -> Tuple[List[str], List[List[float]]]:
    with Path(path).open("r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        rows = [[float(cell) for cell in row] for row in reader if row]
    return header, rows


def write_field_csv(field: RadialField, path: Path) -> Path:
    return write_csv(path, FIELD_COLUMNS, zip(field.r.tolist(), field.values.tolist()))


def read_field_csv(path: Path, d: int) -> RadialField:
    """Rebuild a RadialField from an ``r,value`` CSV written on a cell-centered grid."""
    header, rows = read_csv(path)
    if tuple(header) != FIELD_COLUMNS:
        raise DomainError(f"{path} has header {header}, expected {list(FIELD_COLUMNS)}")
    data = np.asarray(rows, dtype=float)
    if data.ndim != 2 or data.shape[0] < 8:
        raise DomainError(f"{path} holds fewer than 8 cells")
    dr = 2.0 * data[0, 0]
    grid = RadialGrid(d, dr * data.shape[0], data.shape[0])
    if not np.allclose(grid.centers, data[:, 0], rtol=1e-9, atol=1e-12):
        raise DomainError(f"{path} is not on a uniform cell-centered grid")
    return RadialField(grid, data[:, 1])


def read_diagnostics_csv(path: Path) -> List[DiagnosticsRecord]:
    header, rows = read_csv(path)
    if tuple(header) != DiagnosticsRecord.columns():
        raise DomainError(f"{path} is not a diagnostics CSV")
    return [DiagnosticsRecord(*row) for row in rows]
