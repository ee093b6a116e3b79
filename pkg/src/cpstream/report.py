"""Per-GoS summaries of a metrics CSV written by the streaming run."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, MalformedInput
from .pipeline import CSV_COLUMNS

METRICS = CSV_COLUMNS[1:]


@dataclass
class GroupSummary:
    gos: int
    first_frame: int
    last_frame: int
    count: int
    means: dict[str, float]
    slopes: dict[str, float]


def parse_metrics_csv(text: str) -> dict[str, np.ndarray]:
    """Parse metrics CSV text into column arrays, checking header and numeric cells."""
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if not rows:
        raise EmptyInput("metrics CSV is empty")
    header = [h.strip() for h in rows[0]]
    missing = [c for c in CSV_COLUMNS if c not in header]
    if missing:
        raise MalformedInput(f"metrics CSV lacks columns {missing}")
    if len(rows) == 1:
        raise EmptyInput("metrics CSV has a header but no rows")
    cols = {c: [] for c in CSV_COLUMNS}
    for n, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise MalformedInput(f"line {n}: expected {len(header)} cells, got {len(row)}")
        for c in CSV_COLUMNS:
            cell = row[header.index(c)].strip()
            try:
                cols[c].append(float(cell))
            except ValueError:
                raise MalformedInput(f"line {n}: column {c!r} is not a number: {cell!r}") from None
    frames = np.array(cols["frame"])
    if np.any(frames != np.round(frames)):
        raise MalformedInput("frame column must hold integers")
    out = {c: np.array(v, dtype=float) for c, v in cols.items()}
    out["frame"] = frames.astype(int)
    return out


def slope(x, y) -> float:
    """Least-squares slope; values are shifted by their first sample so a constant column gives exactly 0."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2:
        return math.nan
    dx = x - x[0]
    dy = y - y[0]
    dx_c = dx - dx.mean()
    denom = float(np.sum(dx_c * dx_c))
    if denom == 0.0:
        return math.nan
    return float(np.sum(dx_c * (dy - dy.mean())) / denom)


def summarize(columns: dict[str, np.ndarray], gos_n: int) -> list[GroupSummary]:
    """Group frames ``[g*N, (g+1)*N)`` and report means and drift slopes per metric."""
    if gos_n < 1:
        raise ValueError("gos_n must be >= 1")
    frames = columns["frame"]
    out = []
    for g in np.unique(frames // gos_n):
        sel = frames // gos_n == g
        f = frames[sel]
        out.append(GroupSummary(
            gos=int(g),
            first_frame=int(f.min()),
            last_frame=int(f.max()),
            count=int(sel.sum()),
            means={m: float(np.mean(columns[m][sel])) for m in METRICS},
            slopes={m: slope(f, columns[m][sel]) for m in METRICS},
        ))
    return out


def to_tsv(groups: list[GroupSummary]) -> str:
    header = ["gos", "first_frame", "last_frame", "count"]
    header += [f"mean_{m}" for m in METRICS] + [f"slope_{m}" for m in METRICS]
    lines = ["\t".join(header)]
    for g in groups:
        cells = [str(g.gos), str(g.first_frame), str(g.last_frame), str(g.count)]
        cells += [repr(g.means[m]) for m in METRICS] + [repr(g.slopes[m]) for m in METRICS]
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"
