"""Text output formats: diagnostics CSV, result tables and field snapshots.

Floats are written with 17 significant digits so every double round-trips.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .diagnostics import DIAG_COLUMNS, DiagRecord
from .mesh import Field, Grid


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    x = float(value)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def write_table(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_table(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_diag_csv(path: str | Path, records: Iterable[DiagRecord]) -> Path:
    return write_table(path, DIAG_COLUMNS, (r.as_tuple() for r in records))


def read_diag_csv(path: str | Path) -> list[DiagRecord]:
    header, rows = read_table(path)
    if tuple(header) != DIAG_COLUMNS:
        raise ValueError(f"unexpected diagnostics header {header!r}")
    out = []
    for row in rows:
        vals = [float(v) for v in row[:-1]]
        out.append(DiagRecord(*vals, clamped=row[-1] == "1"))
    return out


def write_snapshot(path: str | Path, field: Field, t: float) -> Path:
    """Two comment lines (grid, time/variable), then one value per line in
    the grid's canonical cell order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# grid {field.grid.header}", f"# t {fmt(t)} variable {field.tag or 'field'}"]
    lines.extend(fmt(v) for v in field.values)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_snapshot(path: str | Path) -> dict:
    """Parse a snapshot into ``kind``, ``resolution``, ``extents``, ``t``,
    ``tag`` and ``values``."""
    text = Path(path).read_text(encoding="utf-8").splitlines()
    g = text[0].split()
    if g[:2] != ["#", "grid"]:
        raise ValueError("snapshot line 1 must start with '# grid'")
    kind = g[2]
    nres = {"rect": 2, "polar": 2, "radial": 1}[kind]
    resolution = tuple(int(v) for v in g[3 : 3 + nres])
    extents = tuple(float(v) for v in g[3 + nres :])
    h = text[1].split()
    if h[:2] != ["#", "t"] or h[3] != "variable":
        raise ValueError("snapshot line 2 must be '# t <time> variable <tag>'")
    return {
        "kind": kind,
        "resolution": resolution,
        "extents": extents,
        "t": float(h[2]),
        "tag": h[4],
        "values": np.array([float(v) for v in text[2:]]),
    }


def snapshot_name(tag: str, index: int) -> str:
    return f"{tag}_{index:05d}.txt"
