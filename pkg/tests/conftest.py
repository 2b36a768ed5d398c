import numpy as np

from gridmat.grid import make_grid
from gridmat.transport import run_ranks

# grid shapes exercised by the cross-grid suites
GRID_SHAPES = [(1, 1), (1, 2), (2, 1), (2, 2), (2, 3)]


def run_on_grid(r, c, body, *args):
    """Run body(grid, *args) as an SPMD program on an r x c in-process grid.

    Returns the per-rank results in world rank order.
    """

    def entry(comm):
        grid = make_grid(comm, r, c)
        return body(grid, *args)

    return run_ranks(r * c, entry)


def _same(a, b) -> bool:
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        return np.array_equal(a, b, equal_nan=True)
    if isinstance(a, (tuple, list)):
        return len(a) == len(b) and all(_same(x, y) for x, y in zip(a, b))
    return a == b


def agreed(results):
    """Assert all ranks returned the same value and return it."""
    first = results[0]
    for other in results[1:]:
        assert _same(first, other)
    return first
