"""Distributed matrix: global shape + datatype tag + distribution scheme,

stored as one LocalMatrix piece per rank of a process grid.

Element access, redistribution, copy, and norms are collective: every rank
of the grid must call them in the same order.  Views alias a contiguous
submatrix of their parent; a view's nonzero offsets are carried as
per-dimension alignments, so its local piece is a numpy slice of the
parent's storage and writes through either are visible through both.
Root (non-view) matrices are always aligned 0.
"""

from __future__ import annotations

import struct
from typing import IO, Optional

import numpy as np

from .grid import DimLayout, DistScheme, Grid, layouts, local_extent, owner
from .localmat import (
    TAGS,
    _DTYPES,
    LocalMatrix,
    ints_from_counters,
    uniform_from_counters,
)
from .transport import ReduceOp

_TAG_REDIST = 0x700001
_SIZE_MISMATCH = "Matrices must have the same size"
_TAG_MISMATCH = "Matrices must have the same datatype"


class DistMatrix:
    """Globally height x width matrix distributed over a process grid."""

    def __init__(self, grid: Grid, height: int, width: int, tag: str,
                 scheme: DistScheme, local: LocalMatrix,
                 row_align: int = 0, col_align: int = 0,
                 view_info: Optional[tuple] = None) -> None:
        self.grid = grid
        self.height = height
        self.width = width
        self.tag = tag
        self.scheme = scheme
        self.local = local
        self.row_align = row_align
        self.col_align = col_align
        self.view_info = view_info

    # -- construction ----------------------------------------------------

    @classmethod
    def create(cls, grid: Grid, height: int, width: int, tag: str = "d",
               scheme: DistScheme = DistScheme.MC_MR) -> "DistMatrix":
        """Zero-filled distributed matrix (no communication)."""
        if tag not in TAGS:
            raise ValueError(f"unknown datatype tag {tag!r}")
        if height < 0 or width < 0:
            raise ValueError("matrix dimensions must be non-negative")
        lh, lw = local_extent(grid, scheme, height, width)
        return cls(grid, height, width, tag, scheme, LocalMatrix.make(lh, lw, tag))

    def _layouts(self) -> tuple[DimLayout, DimLayout]:
        return layouts(self.grid, self.scheme, self.row_align, self.col_align)

    def global_rows(self) -> np.ndarray:
        """Global row indices owned by this rank, ascending."""
        rl, _ = self._layouts()
        return rl.shift + np.arange(self.local.height, dtype=np.int64) * rl.stride

    def global_cols(self) -> np.ndarray:
        _, cl = self._layouts()
        return cl.shift + np.arange(self.local.width, dtype=np.int64) * cl.stride

    def is_view(self) -> bool:
        return self.view_info is not None

    def __repr__(self) -> str:
        return (f"DistMatrix({self.height}x{self.width} [{self.tag}] "
                f"{self.scheme.value} on {self.grid.height}x{self.grid.width})")

    def fill_uniform(self, seed: int) -> None:
        """Seeded fill; element (i, j) is a pure function of (seed, i, j, h),

        so the assembled global matrix is independent of the grid shape.
        """
        gi = self.global_rows().astype(np.uint64)
        gj = self.global_cols().astype(np.uint64)
        if gi.size == 0 or gj.size == 0:
            return
        counters = gi[:, None] + gj[None, :] * np.uint64(self.height)
        if self.tag == "d":
            self.local.a[:, :] = uniform_from_counters(seed, counters)
        else:
            self.local.a[:, :] = ints_from_counters(seed, counters)

    # -- element access ----------------------------------------------------

    def _check_bounds(self, i: int, j: int) -> None:
        if not (0 <= i < self.height and 0 <= j < self.width):
            raise IndexError(
                f"index ({i},{j}) out of bounds for {self.height}x{self.width}"
            )

    def owner_rank(self, i: int, j: int) -> int:
        self._check_bounds(i, j)
        return owner(self.grid, self.scheme, i, j, self.row_align, self.col_align)

    def get_global(self, i: int, j: int):
        """Collective: owner broadcasts, every rank returns the same value."""
        self._check_bounds(i, j)
        rl, cl = self._layouts()
        if self.scheme is DistScheme.STAR_STAR:
            return self.local.get(i, j)
        root = self.owner_rank(i, j)
        dt = "<f8" if self.tag == "d" else "<i8"
        if self.grid.world.rank == root:
            data = np.asarray(
                [self.local.a[rl.to_local(i), cl.to_local(j)]], dtype=dt
            ).tobytes()
        else:
            data = b""
        data = self.grid.world.broadcast(root, data)
        v = np.frombuffer(data, dtype=dt)[0]
        return float(v) if self.tag == "d" else int(v)

    def set_global(self, i: int, j: int, v) -> None:
        """Value must be supplied identically on all ranks; the owner stores."""
        self._check_bounds(i, j)
        rl, cl = self._layouts()
        if rl.owns(i) and cl.owns(j):
            self.local.a[rl.to_local(i), cl.to_local(j)] = v

    # -- views ----------------------------------------------------------

    def view(self, row_begin: int, row_end: int, col_begin: int,
             col_end: int) -> "DistMatrix":
        """Aliasing view of the half-open range [row_begin, row_end) x

        [col_begin, col_end).  Writes through the view are visible in the
        parent and vice versa.  Views of views are allowed.
        """
        if not (0 <= row_begin <= row_end <= self.height):
            raise IndexError(
                f"row range [{row_begin},{row_end}) out of bounds for h={self.height}"
            )
        if not (0 <= col_begin <= col_end <= self.width):
            raise IndexError(
                f"col range [{col_begin},{col_end}) out of bounds for w={self.width}"
            )
        rl, cl = self._layouts()
        r0, r1 = rl.local_slice(row_begin, row_end)
        c0, c1 = cl.local_slice(col_begin, col_end)
        sub = LocalMatrix(self.local.a[r0:r1, c0:c1], self.tag)
        return DistMatrix(
            self.grid, row_end - row_begin, col_end - col_begin, self.tag,
            self.scheme, sub,
            row_align=(self.row_align + row_begin) % rl.stride,
            col_align=(self.col_align + col_begin) % cl.stride,
            view_info=(self, row_begin, col_begin),
        )

    # -- redistribution ----------------------------------------------------

    def _pack_owned(self, rows_l: np.ndarray, cols_l: np.ndarray) -> bytes:
        gi = self.global_rows()[rows_l]
        gj = self.global_cols()[cols_l]
        vals = np.asfortranarray(self.local.a[np.ix_(rows_l, cols_l)])
        dt = "<f8" if self.tag == "d" else "<i8"
        return (struct.pack("<qq", len(gi), len(gj))
                + gi.astype("<i8").tobytes() + gj.astype("<i8").tobytes()
                + vals.astype(dt).tobytes(order="F"))

    def _unpack_into(self, data: bytes, out: "DistMatrix") -> None:
        nr, nc = struct.unpack_from("<qq", data, 0)
        off = 16
        gi = np.frombuffer(data, dtype="<i8", count=nr, offset=off)
        off += 8 * nr
        gj = np.frombuffer(data, dtype="<i8", count=nc, offset=off)
        off += 8 * nc
        dt = "<f8" if self.tag == "d" else "<i8"
        vals = np.frombuffer(data, dtype=dt, offset=off).reshape((nr, nc), order="F")
        rl, cl = out._layouts()
        li = (gi - rl.shift) // rl.stride
        lj = (gj - cl.shift) // cl.stride
        out.local.a[np.ix_(li, lj)] = vals

    def redistribute(self, target: DistScheme, row_align: int = 0,
                     col_align: int = 0) -> "DistMatrix":
        """New matrix with the same global content under ``target``.

        Collective.  Gathers via allgather for a replicated target;
        otherwise every rank sends each owned element straight to its
        destination rank (one batched message per rank pair).  Nonzero
        target alignments are internal plumbing for updates through views.
        """
        grid = self.grid
        lh, lw = local_extent(grid, target, self.height, self.width,
                              row_align, col_align)
        out = DistMatrix(grid, self.height, self.width, self.tag, target,
                         LocalMatrix.make(lh, lw, self.tag),
                         row_align=row_align, col_align=col_align)
        all_rows = np.arange(self.local.height, dtype=np.int64)
        all_cols = np.arange(self.local.width, dtype=np.int64)

        if target is DistScheme.STAR_STAR:
            if self.scheme is DistScheme.STAR_STAR:
                out.local.a[:, :] = self.local.a
                return out
            blocks = grid.world.allgather_blocks(self._pack_owned(all_rows, all_cols))
            for b in blocks:
                self._unpack_into(b, out)
            return out

        if self.scheme is DistScheme.STAR_STAR:
            # replicated source: select locally, no communication
            out.local.a[:, :] = self.local.a[np.ix_(out.global_rows(),
                                                    out.global_cols())]
            return out

        if (self.scheme is target and not self.is_view()
                and (self.row_align, self.col_align) == (row_align, col_align)):
            out.local.a[:, :] = self.local.a
            return out

        # generic batched point-to-point (handles scheme changes and
        # realignment of views)
        trl, tcl = out._layouts()
        gi = self.global_rows()
        gj = self.global_cols()
        row_coord = ((gi + row_align) % trl.stride) if trl.stride > 1 \
            else np.zeros_like(gi)
        col_coord = ((gj + col_align) % tcl.stride) if tcl.stride > 1 \
            else np.zeros_like(gj)

        def dest_rank(rc: int, cc: int) -> int:
            if target is DistScheme.MC_MR:
                return grid.rank_of(rc, cc)
            return rc  # VC_STAR: world rank = row residue

        row_groups: dict[int, np.ndarray] = {
            int(rc): all_rows[row_coord == rc] for rc in np.unique(row_coord)
        }
        col_groups: dict[int, np.ndarray] = {
            int(cc): all_cols[col_coord == cc] for cc in np.unique(col_coord)
        }
        world = grid.world
        me = world.rank
        outgoing: dict[int, bytes] = {}
        for rc, rsel in row_groups.items():
            for cc, csel in col_groups.items():
                outgoing[dest_rank(rc, cc)] = self._pack_owned(rsel, csel)
        empty = struct.pack("<qq", 0, 0)
        stash = None
        for d in range(world.size):
            payload = outgoing.get(d, empty)
            if d == me:
                stash = payload
            else:
                world.send(d, _TAG_REDIST, payload)
        for s in range(world.size):
            data = stash if s == me else world.recv(s, _TAG_REDIST)
            self._unpack_into(data, out)
        world.barrier()
        return out

    def copy_from(self, src: "DistMatrix") -> None:
        """Deep copy: this matrix adopts src's shape, scheme, and tag."""
        fresh = src.redistribute(src.scheme)
        self.grid = fresh.grid
        self.height = fresh.height
        self.width = fresh.width
        self.tag = fresh.tag
        self.scheme = fresh.scheme
        self.local = fresh.local
        self.row_align = 0
        self.col_align = 0
        self.view_info = None

    def to_global_array(self) -> np.ndarray:
        """Collective gather: every rank returns the full h x w array."""
        return self.redistribute(DistScheme.STAR_STAR).local.a.copy()

    def validate(self) -> None:
        """Debug collective: all ranks must agree on the matrix header."""
        header = struct.pack(
            "<qqqq", self.height, self.width, TAGS.index(self.tag),
            list(DistScheme).index(self.scheme),
        )
        blocks = self.grid.world.allgather_blocks(header)
        if any(b != header for b in blocks):
            raise RuntimeError("ranks disagree on distributed matrix header")


def from_replicated(grid: Grid, local: LocalMatrix) -> DistMatrix:
    """Wrap one identical-per-rank LocalMatrix as a STAR_STAR matrix."""
    return DistMatrix(grid, local.height, local.width, local.tag,
                      DistScheme.STAR_STAR, local.copy())


def axpy(alpha: float, X: DistMatrix, Y: DistMatrix) -> None:
    """Y <- alpha*X + Y.  Purely local for identically aligned operands;

    a misaligned X (a view) is realigned through a deep copy first.
    """
    if X.tag != Y.tag:
        raise ValueError(_TAG_MISMATCH)
    if X.height != Y.height or X.width != Y.width:
        raise ValueError(_SIZE_MISMATCH)
    if X.scheme is not Y.scheme or X.grid is not Y.grid:
        raise ValueError("axpy operands must share one grid and scheme")
    if X.tag == "i" and alpha != int(alpha):
        raise ValueError("integer matrices require an integer alpha")
    if (X.row_align, X.col_align) != (Y.row_align, Y.col_align):
        X = X.redistribute(X.scheme, Y.row_align, Y.col_align)
    if X.tag == "i":
        Y.local.a[:, :] += int(alpha) * X.local.a
    else:
        Y.local.a[:, :] += alpha * X.local.a


def dist_norm(kind: str, A: DistMatrix) -> float:
    """Collective norm, identical on all ranks.

    max is exact; frobenius accumulates squares in fixed rank order, so it
    is bitwise deterministic for a fixed grid.
    """
    vals = A.local.a.astype(np.float64, copy=False)
    if A.scheme is DistScheme.STAR_STAR:
        if kind == "max":
            return float(np.max(np.abs(vals))) if vals.size else 0.0
        if kind == "frobenius":
            return float(np.sqrt(np.sum(vals * vals)))
        raise ValueError(f"unknown norm kind {kind!r}")
    if kind == "max":
        part = float(np.max(np.abs(vals))) if vals.size else 0.0
        return float(A.grid.world.allreduce(ReduceOp.MAX, [part])[0])
    if kind == "frobenius":
        part = float(np.sum(vals * vals)) if vals.size else 0.0
        total = A.grid.world.allreduce(ReduceOp.SUM, [part])[0]
        return float(np.sqrt(total))
    raise ValueError(f"unknown norm kind {kind!r}")


def format_value(v, tag: str) -> str:
    """Display format: shortest decimal at 6 significant digits."""
    if tag == "i":
        return str(int(v))
    return format(float(v), "g")


def print_matrix(A: DistMatrix, sink: IO[str]) -> None:
    """Collective print: rank (0,0) writes a ``h x w [tag]`` header and the

    rows at 6 significant digits; other ranks write nothing.
    """
    full = A.redistribute(DistScheme.STAR_STAR).local.a
    if A.grid.world.rank == 0:
        sink.write(f"{A.height} x {A.width} [{A.tag}]\n")
        for i in range(A.height):
            sink.write(" ".join(format_value(v, A.tag) for v in full[i, :]) + "\n")
