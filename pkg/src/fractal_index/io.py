"""Atomic writers and matching loaders for CSV, JSON and two-column plot data."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

__all__ = [
    "fraction_text",
    "decimal_text",
    "parse_fraction",
    "atomic_write_text",
    "write_csv",
    "read_csv",
    "load_table",
    "write_json",
    "read_json",
    "write_plot_data",
    "read_plot_data",
    "input_hash",
    "jsonable",
]


def fraction_text(x) -> str:
    """Always ``p/q``, also for integers."""
    x = Fraction(x)
    return f"{x.numerator}/{x.denominator}"


def decimal_text(x) -> str:
    return repr(float(x))


def parse_fraction(text: str) -> Fraction:
    return Fraction(text.strip())


def atomic_write_text(path, text: str) -> Path:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else v for v in row])
    return atomic_write_text(path, buf.getvalue())


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def load_table(path) -> list[dict]:
    """Rows as dicts; ``*_exact`` columns become fractions, ``*_decimal`` floats, the rest strings."""
    header, rows = read_csv(path)
    out = []
    for row in rows:
        rec = {}
        for key, val in zip(header, row):
            if val == "":
                rec[key] = None
            elif key.endswith("_exact"):
                rec[key] = parse_fraction(val)
            elif key.endswith("_decimal"):
                rec[key] = float(val)
            else:
                rec[key] = val
        out.append(rec)
    return out


def jsonable(obj):
    """Convert fractions, numpy scalars/arrays and tuples into plain JSON values."""
    import numpy as np

    if isinstance(obj, Fraction):
        return fraction_text(obj)
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def write_json(path, obj) -> Path:
    text = json.dumps(jsonable(obj), indent=2, sort_keys=True) + "\n"
    return atomic_write_text(path, text)


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_plot_data(path, xs: Sequence, ys: Sequence, comment: str | None = None) -> Path:
    lines = [f"# {comment}"] if comment else []
    lines += [f"{x!r} {float(y)!r}" for x, y in zip(xs, ys)]
    return atomic_write_text(path, "\n".join(lines) + "\n")


def read_plot_data(path) -> tuple[list[float], list[float]]:
    xs, ys = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            a, b = line.split()
            xs.append(float(a))
            ys.append(float(b))
    return xs, ys


def input_hash(payload) -> str:
    text = json.dumps(jsonable(payload), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()
