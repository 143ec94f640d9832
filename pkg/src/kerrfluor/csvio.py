"""CSV files with ``# key = value`` metadata headers."""
from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np


def format_value(v) -> str:
    """repr for floats (round-trips exactly), str for the rest."""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path: str | Path, columns: dict[str, np.ndarray | list],
                header: dict | None = None) -> None:
    names = list(columns)
    cols = [list(columns[k]) for k in names]
    if len({len(c) for c in cols}) > 1:
        raise ValueError("columns differ in length")
    buf = io.StringIO()
    for k, v in (header or {}).items():
        buf.write(f"# {k} = {format_value(v)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    for row in zip(*cols):
        w.writerow([format_value(x) for x in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_table(path: str | Path) -> tuple[dict[str, list[str]], dict[str, str]]:
    """Return (columns as string lists, header metadata)."""
    meta: dict[str, str] = {}
    body = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#"):
                key, sep, val = line[1:].partition("=")
                if sep:
                    meta[key.strip()] = val.strip()
            elif line.strip():
                body.append(line)
    if not body:
        raise ValueError(f"{path}: no table found")
    reader = csv.reader(body)
    names = [n.strip() for n in next(reader)]
    cols: dict[str, list[str]] = {n: [] for n in names}
    for lineno, row in enumerate(reader, 2):
        if len(row) != len(names):
            raise ValueError(f"{path}: row {lineno} has {len(row)} fields, expected {len(names)}")
        for n, x in zip(names, row):
            cols[n].append(x.strip())
    return cols, meta


def float_column(cols: dict[str, list[str]], name: str, path: str | Path = "") -> np.ndarray:
    if name not in cols:
        raise ValueError(f"{path}: missing column {name!r}")
    try:
        return np.array([float(x) for x in cols[name]])
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric entry in column {name!r}") from exc
