"""Atomic file output and the JSON/CSV encodings used for results."""

import csv
import io
import json
import math
import os
import tempfile

import numpy as np

SCHEMA_VERSION = "stretchpoly.result.v1"


def atomic_write_text(path, text):
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def to_jsonable(obj):
    """Convert numpy scalars/arrays and complex numbers to plain JSON types."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": float(obj.real), "im": float(obj.imag)}
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    return obj


def dumps(obj):
    """Canonical JSON: sorted keys, fixed indentation, shortest float repr."""
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2, allow_nan=True) + "\n"


def loads(text):
    return json.loads(text)


def csv_text(header, rows, comments=()):
    buf = io.StringIO()
    for line in comments:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _cell(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "inf" if math.isinf(v) and v > 0 else ("-inf" if math.isinf(v) else repr(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def plot_data_text(x, y, err=None, comments=()):
    """Three-column ``x,y,err`` table sorted by ``x``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    err = np.zeros_like(y) if err is None else np.asarray(err, dtype=float)
    order = np.argsort(x, kind="stable")
    return csv_text(["x", "y", "err"], zip(x[order], y[order], err[order]), comments)
