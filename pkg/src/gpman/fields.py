"""CSV input/output for per-vertex fields and summary tables."""

import csv
import io
import os
import tempfile
from pathlib import Path

import numpy as np

__all__ = ["export_field", "read_field", "write_table", "read_table", "format_float"]


def format_float(value):
    """17 significant digits: enough to round-trip any float64."""
    return format(float(value), ".17g")


def _atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def export_field(values, path, vertex_ids=None):
    """Write ``vertex_id,value`` rows with LF endings, atomically."""
    values = np.asarray(values, dtype=float).reshape(-1)
    if not np.all(np.isfinite(values)):
        raise ValueError("field values must be finite")
    ids = np.arange(values.size) if vertex_ids is None else np.asarray(vertex_ids)
    lines = ["vertex_id,value"]
    lines += [f"{int(i)},{format_float(v)}" for i, v in zip(ids, values)]
    _atomic_write(path, "\n".join(lines) + "\n")
    return Path(path)


def read_field(path):
    """Return ``(vertex_ids, values)`` from a field CSV."""
    ids, values = [], []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["vertex_id", "value"]:
            raise ValueError(f"{path}: unexpected header {header}")
        for row in reader:
            ids.append(int(row[0]))
            values.append(float(row[1]))
    return np.array(ids, dtype=np.int64), np.array(values)


def write_table(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v
                         for v in row])
    _atomic_write(path, buf.getvalue())
    return Path(path)


def read_table(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))
