"""Numeric text-table ingestion into distributed matrices, and the writer

that round-trips them.

Every rank streams the whole file (shared-filesystem launch model) and
keeps only the elements it owns; shape agreement across ranks is validated
collectively.  The writer gathers to rank (0,0) and emits full round-trip
precision, unlike the 6-significant-digit display format.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distmat import DistMatrix
from .grid import DistScheme, Grid
from .localmat import _DTYPES
from .transport import ReduceOp


@dataclass(frozen=True)
class TableFormat:
    delimiter: str = "whitespace"  # "whitespace" (any run) or "comma"
    header: bool = False           # first line skipped, never parsed
    tag: str = "d"


class TableFormatError(ValueError):
    pass


def _tokenize(line: str, fmt: TableFormat) -> list[str]:
    if fmt.delimiter == "comma":
        return [t.strip() for t in line.split(",")]
    return line.split()


def _parse_token(token: str, fmt: TableFormat, lineno: int, col: int):
    try:
        if fmt.tag == "i":
            return int(token)
        return float(token)
    except ValueError:
        kind = "integer" if fmt.tag == "i" else "number"
        raise TableFormatError(
            f"unparseable {kind} {token!r} at line {lineno}, column {col}"
        ) from None


def read_table_dist(path: str, grid: Grid,
                    fmt: TableFormat = TableFormat()) -> DistMatrix:
    """Parse a rectangular numeric table into an MC_MR matrix.

    Collective.  Ragged rows and bad tokens raise with 1-based file
    coordinates; an empty file yields a valid 0 x 0 matrix.
    """
    if fmt.tag not in _DTYPES:
        raise ValueError(f"unknown datatype tag {fmt.tag!r}")
    rows: list[list] = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if fmt.header and lineno == 1:
                continue
            if line.strip() == "":
                continue
            tokens = _tokenize(line.strip(), fmt)
            if width is None:
                width = len(tokens)
            elif len(tokens) != width:
                raise TableFormatError(
                    f"ragged row at line {lineno}: expected {width} values, "
                    f"got {len(tokens)}"
                )
            rows.append([
                _parse_token(t, fmt, lineno, c + 1) for c, t in enumerate(tokens)
            ])
    h = len(rows)
    w = width or 0
    shape = grid.world.allreduce(ReduceOp.MAX, [float(h), float(w)])
    if (h, w) != (int(shape[0]), int(shape[1])):
        raise TableFormatError("ranks disagree on table shape")
    M = DistMatrix.create(grid, h, w, fmt.tag, DistScheme.MC_MR)
    if h and w:
        full = np.array(rows, dtype=_DTYPES[fmt.tag])
        M.local.a[:, :] = full[np.ix_(M.global_rows(), M.global_cols())]
    return M


def _format_full(v, tag: str) -> str:
    if tag == "i":
        return str(int(v))
    return repr(float(v))  # shortest round-trip decimal


def write_table(A: DistMatrix, path: str,
                fmt: TableFormat = TableFormat()) -> None:
    """Collective write; rank (0,0) emits after a gather, others idle.

    Values are written at full round-trip precision so reading the file
    back reproduces the matrix bitwise.
    """
    full = A.redistribute(DistScheme.STAR_STAR).local.a
    if A.grid.world.rank != 0:
        return
    sep = "," if fmt.delimiter == "comma" else " "
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(A.height):
            fh.write(sep.join(_format_full(v, A.tag) for v in full[i, :]) + "\n")
