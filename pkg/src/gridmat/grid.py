"""Process grid: r x c arrangement of ranks and the element-cyclic maps.

Ranks are laid out column-major over the grid: ``rank = my_row + my_col*r``.
A distributed matrix assigns global element (i, j) to a rank by residue:

* ``MC_MR``    -- 2D element-cyclic: grid row ``i mod r``, grid column
  ``j mod c`` (the default distribution);
* ``VC_STAR``  -- rows cycle over all ``r*c`` ranks, columns replicated;
* ``STAR_STAR`` -- fully replicated.

Matrix views shift these residues by their offset; the shift is carried as
an internal per-dimension alignment (root matrices are always aligned 0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from .transport import Communicator


class DistScheme(Enum):
    MC_MR = "MC_MR"
    VC_STAR = "VC_STAR"
    STAR_STAR = "STAR_STAR"


@dataclass(frozen=True)
class Grid:
    """Immutable r x c arrangement of the world's ranks."""

    world: Communicator
    height: int  # r
    width: int   # c
    row_comm: Communicator = field(repr=False)  # my grid row, ordered by col
    col_comm: Communicator = field(repr=False)  # my grid column, ordered by row
    my_row: int
    my_col: int

    @property
    def size(self) -> int:
        return self.height * self.width

    def rank_of(self, grid_row: int, grid_col: int) -> int:
        """Column-major rank numbering: rank = row + col*r."""
        return grid_row + grid_col * self.height

    def __repr__(self) -> str:
        return (f"Grid({self.height}x{self.width}, rank {self.world.rank} at "
                f"({self.my_row},{self.my_col}))")


def auto_grid_shape(size: int) -> tuple[int, int]:
    """Largest divisor r of size with r <= sqrt(size); c = size / r."""
    r = 1
    for d in range(1, int(math.isqrt(size)) + 1):
        if size % d == 0:
            r = d
    return r, size // r


def make_grid(world: Communicator, r: int | None = None,
              c: int | None = None) -> Grid:
    """Collectively build a grid over ``world``; auto shape when r, c omitted."""
    size = world.size
    if r is None and c is None:
        r, c = auto_grid_shape(size)
    elif r is None:
        r = size // c
    elif c is None:
        c = size // r
    if r * c != size:
        raise ValueError(f"grid {r}x{c} does not match world size {size}")
    my_row = world.rank % r
    my_col = world.rank // r
    row_comm = world.split(color=my_row, key=my_col)
    col_comm = world.split(color=my_col, key=my_row)
    return Grid(world=world, height=r, width=c, row_comm=row_comm,
                col_comm=col_comm, my_row=my_row, my_col=my_col)


@dataclass(frozen=True)
class DimLayout:
    """One dimension of a distribution as seen by the calling rank.

    Global index g is owned here iff ``(g + align) mod stride == coord``;
    the rank's first owned index is ``shift``, then every ``stride``-th.
    """

    stride: int
    coord: int
    align: int

    @property
    def shift(self) -> int:
        return (self.coord - self.align) % self.stride

    def local_count(self, n: int) -> int:
        if n <= self.shift:
            return 0
        return (n - self.shift + self.stride - 1) // self.stride

    def owner_coord(self, g: int) -> int:
        return (g + self.align) % self.stride

    def owns(self, g: int) -> bool:
        return self.owner_coord(g) == self.coord

    def to_local(self, g: int) -> int:
        if not self.owns(g):
            raise IndexError(f"global index {g} not owned by this rank")
        return (g - self.shift) // self.stride

    def to_global(self, loc: int) -> int:
        return self.shift + loc * self.stride

    def local_slice(self, g0: int, g1: int) -> tuple[int, int]:
        """Local index range covering global half-open range [g0, g1)."""
        lo = max(0, -(-(g0 - self.shift) // self.stride))
        hi = max(0, -(-(g1 - self.shift) // self.stride))
        return lo, hi


def layouts(grid: Grid, scheme: DistScheme, row_align: int = 0,
            col_align: int = 0) -> tuple[DimLayout, DimLayout]:
    """Per-dimension layouts of ``scheme`` for the calling rank."""
    if scheme is DistScheme.MC_MR:
        return (DimLayout(grid.height, grid.my_row, row_align),
                DimLayout(grid.width, grid.my_col, col_align))
    if scheme is DistScheme.VC_STAR:
        return (DimLayout(grid.size, grid.world.rank, row_align),
                DimLayout(1, 0, 0))
    if scheme is DistScheme.STAR_STAR:
        return (DimLayout(1, 0, 0), DimLayout(1, 0, 0))
    raise ValueError(f"unknown scheme {scheme}")


def owner(grid: Grid, scheme: DistScheme, i: int, j: int,
          row_align: int = 0, col_align: int = 0) -> int:
    """World rank owning global element (i, j); own rank for replicated."""
    if scheme is DistScheme.MC_MR:
        return grid.rank_of((i + row_align) % grid.height,
                            (j + col_align) % grid.width)
    if scheme is DistScheme.VC_STAR:
        return (i + row_align) % grid.size
    if scheme is DistScheme.STAR_STAR:
        return grid.world.rank
    raise ValueError(f"unknown scheme {scheme}")


def local_extent(grid: Grid, scheme: DistScheme, h: int, w: int,
                 row_align: int = 0, col_align: int = 0) -> tuple[int, int]:
    """Local buffer shape on the calling rank for a global h x w matrix."""
    rows, cols = layouts(grid, scheme, row_align, col_align)
    return rows.local_count(h), cols.local_count(w)
