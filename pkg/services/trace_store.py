"""Trace persistence.

Writes a trace as CSV (header exactly the declared columns, floats in
repr form) next to a JSON sidecar with metadata and flags. Both files are
written to a temporary name and renamed, so readers never see a partial
file. Output depends only on the trace contents, which keeps reruns with
the same config and seed byte-identical.
"""

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Any

import numpy as np

from config.logging_config import get_logger
from state.errors import TraceSchemaError
from state.schema import Trace


logger = get_logger(__name__)


def write_trace(trace: Trace, path: Path | str) -> tuple[Path, Path]:
    """Write trace rows to ``path`` and metadata to ``path`` with a .json suffix.

    Args:
        trace: Trace to persist.
        path: CSV destination.

    Returns:
        Tuple of (csv path, sidecar path).

    Raises:
        TraceSchemaError: If a row does not match the declared columns.
    """
    path = Path(path)
    for row in trace.rows:
        if len(row) != len(trace.columns):
            raise TraceSchemaError(f"Row of length {len(row)} does not match {len(trace.columns)} columns")

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(trace.columns)
    for row in trace.rows:
        writer.writerow([_format_number(v) for v in row])

    sidecar_path = path.with_suffix(".json")
    sidecar = {
        "columns": list(trace.columns),
        "rows": len(trace.rows),
        "flags": sorted(trace.flags),
        "metadata": trace.metadata,
    }
    _atomic_write(path, buffer.getvalue())
    _atomic_write(sidecar_path, to_json(sidecar))
    logger.info(f"Wrote {len(trace.rows)} rows to {path}")
    return path, sidecar_path


def write_json(payload: Any, path: Path | str) -> Path:
    """Write any JSON-compatible payload (numpy values allowed) atomically."""
    path = Path(path)
    _atomic_write(path, to_json(payload))
    return path


def read_trace(path: Path | str) -> Trace:
    """Load a trace written by write_trace (values as floats)."""
    path = Path(path)
    with path.open(newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            raise TraceSchemaError(f"{path} has no header row")
        trace = Trace(columns=tuple(header))
        for row in reader:
            trace.append(**{name: float(value) for name, value in zip(header, row)})
    sidecar = path.with_suffix(".json")
    if sidecar.exists():
        data = json.loads(sidecar.read_text())
        trace.metadata.update(data.get("metadata", {}))
        trace.flags.update(data.get("flags", []))
    return trace


def to_json(payload: Any) -> str:
    """Sorted, indented JSON with numpy scalars and arrays converted."""
    return json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, (set, frozenset)):
        return sorted(value)
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def _format_number(value: float) -> str:
    if float(value).is_integer() and abs(value) < 2**53:
        return str(int(value))
    return repr(float(value))


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as handle:
            handle.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise
