"""Distributed dense linear algebra on an SPMD process grid."""

from .transport import Communicator, ReduceOp, TransportError, run_ranks, single_world
from .grid import DistScheme, Grid, make_grid
from .localmat import LocalMatrix
from .distmat import DistMatrix

__all__ = [
    "Communicator",
    "ReduceOp",
    "TransportError",
    "run_ranks",
    "single_world",
    "DistScheme",
    "Grid",
    "make_grid",
    "LocalMatrix",
    "DistMatrix",
]
