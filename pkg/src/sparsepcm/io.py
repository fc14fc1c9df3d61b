"""CSV readers and writers for sparse/dense PCMs, win counts, scores and rankings."""

from __future__ import annotations

import csv
import io
from fractions import Fraction
from pathlib import Path

import numpy as np

from .core import ComparisonSet, DensePcm, PcmError, ScoreVector

SPARSE_HEADER = ["i", "j", "value"]
COUNTS_HEADER = ["i", "j", "wins_i", "wins_j"]


class PcmParseError(PcmError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


def fmt(x: float) -> str:
    return repr(float(x) + 0.0)  # shortest round-trip repr; + 0.0 folds -0.0


def _rows(path) -> list[tuple[int, list[str]]]:
    text = Path(path).read_text(encoding="utf-8")
    reader = csv.reader(io.StringIO(text))
    return [(reader.line_num, [c.strip() for c in row]) for row in reader if any(c.strip() for c in row)]


def sniff(path) -> str:
    """Return ``"sparse"``, ``"counts"`` or ``"dense"`` from the header line."""
    rows = _rows(path)
    if not rows:
        raise PcmParseError("empty file", 1)
    header = [c.lower() for c in rows[0][1]]
    if header == SPARSE_HEADER:
        return "sparse"
    if header == COUNTS_HEADER:
        return "counts"
    return "dense"


def _int(cell: str, line: int) -> int:
    try:
        return int(cell)
    except ValueError:
        raise PcmParseError(f"expected integer node id, got {cell!r}", line) from None


def _float(cell: str, line: int) -> float:
    """Decimal or exact fraction such as ``1/3``."""
    try:
        return float(Fraction(cell)) if "/" in cell else float(cell)
    except (ValueError, ZeroDivisionError):
        raise PcmParseError(f"expected number, got {cell!r}", line) from None


def read_sparse(path, n: int | None = None) -> ComparisonSet:
    """Read ``i,j,value`` rows. Reciprocal counterparts may be omitted."""
    rows = _rows(path)
    if not rows or [c.lower() for c in rows[0][1]] != SPARSE_HEADER:
        raise PcmParseError("expected header 'i,j,value'", rows[0][0] if rows else 1)
    edges, seen = [], {}
    for line, row in rows[1:]:
        if len(row) != 3:
            raise PcmParseError(f"expected 3 fields, got {len(row)}", line)
        i, j, v = _int(row[0], line), _int(row[1], line), _float(row[2], line)
        if i == j:
            raise PcmParseError(f"self-comparison ({i}, {j})", line)
        if i < 0 or j < 0:
            raise PcmParseError("negative node id", line)
        if not v > 0 or not np.isfinite(v):
            raise PcmParseError(f"value must be positive and finite, got {v!r}", line)
        if (i, j) in seen:
            raise PcmParseError(f"duplicate pair ({i}, {j}), first on line {seen[(i, j)]}", line)
        seen[(i, j)] = line
        edges.append((i, j, v))
    size = max((max(i, j) for i, j, _ in edges), default=-1) + 1
    return ComparisonSet.from_edges(max(size, n or 0), edges, "cardinal")


def read_counts(path, n: int | None = None) -> ComparisonSet:
    rows = _rows(path)
    if not rows or [c.lower() for c in rows[0][1]] != COUNTS_HEADER:
        raise PcmParseError("expected header 'i,j,wins_i,wins_j'", rows[0][0] if rows else 1)
    parsed = []
    for line, row in rows[1:]:
        if len(row) != 4:
            raise PcmParseError(f"expected 4 fields, got {len(row)}", line)
        i, j = _int(row[0], line), _int(row[1], line)
        wi, wj = _float(row[2], line), _float(row[3], line)
        if i == j or i < 0 or j < 0:
            raise PcmParseError(f"invalid pair ({i}, {j})", line)
        if wi < 0 or wj < 0 or wi != int(wi) or wj != int(wj):
            raise PcmParseError("win counts must be nonnegative integers", line)
        parsed.append((i, j, wi, wj))
    size = max((max(i, j) for i, j, _, _ in parsed), default=-1) + 1
    return ComparisonSet.from_counts(max(size, n or 0), parsed)


def read_dense(path) -> DensePcm:
    rows = _rows(path)
    matrix = []
    for line, row in rows:
        matrix.append([_float(c, line) for c in row])
        if len(row) != len(rows):
            raise PcmParseError(f"expected {len(rows)} columns, got {len(row)}", line)
    if not matrix:
        raise PcmParseError("empty matrix", 1)
    return DensePcm(np.array(matrix))


def write_sparse(obs: ComparisonSet, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SPARSE_HEADER)
        for i, j, v in obs.edges:
            w.writerow([i, j, fmt(v)])


def write_counts(obs: ComparisonSet, path) -> None:
    wins = {(i, j): v for i, j, v in obs.edges}
    pairs = sorted({(min(i, j), max(i, j)) for i, j in wins})
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COUNTS_HEADER)
        for i, j in pairs:
            w.writerow([i, j, int(wins.get((i, j), 0)), int(wins.get((j, i), 0))])


def write_dense(pcm: DensePcm, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in pcm.entries:
            w.writerow([fmt(v) for v in row])


def write_scores(x: ScoreVector, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "score"])
        for i, s in enumerate(x.scores):
            w.writerow([i, fmt(s)])


def ranking(x: ScoreVector) -> list[tuple[int, int, float]]:
    """``(rank, i, score)`` sorted by descending score, ties by ascending id."""
    order = np.lexsort((np.arange(x.n), -x.scores))
    return [(r + 1, int(i), float(x.scores[i])) for r, i in enumerate(order)]


def write_ranking(x: ScoreVector, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["rank", "i", "score"])
    for r, i, s in ranking(x):
        w.writerow([r, i, fmt(s)])
