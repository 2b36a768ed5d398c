"""Statistical layer over distributed matrices: column moments,

centering/scaling, and SVD-based principal component analysis.

PCA never forms a covariance matrix: the input is centered (and optionally
scaled), its right singular vectors become the rotation, and the component
standard deviations are the singular values times ``1/sqrt(h - 1)``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .algorithms import dist_svd_values_vt
from .distmat import DistMatrix
from .grid import DistScheme
from .localmat import LocalMatrix
from .transport import ReduceOp


@dataclass
class ScaledMatrix:
    """Centered/scaled data plus the applied column statistics.

    ``center`` and ``scale`` are empty when the corresponding flag was off.
    """

    matrix: DistMatrix
    center: np.ndarray = field(default_factory=lambda: np.empty(0))
    scale: np.ndarray = field(default_factory=lambda: np.empty(0))


@dataclass
class PcaResult:
    sdev: np.ndarray        # descending component standard deviations
    rotation: LocalMatrix   # w x w principal directions, one per column
    center: np.ndarray      # column means (empty if centering was off)


def _replicate_columns(A: DistMatrix, per_col: np.ndarray) -> np.ndarray:
    """Assemble per-local-column values into a full width vector, on all ranks."""
    ids = A.global_cols().astype("<i8")
    payload = struct.pack("<q", len(ids)) + ids.tobytes() \
        + per_col.astype("<f8").tobytes()
    out = np.zeros(A.width)
    for b in A.grid.row_comm.allgather_blocks(payload):
        (n,) = struct.unpack_from("<q", b, 0)
        cols = np.frombuffer(b, dtype="<i8", count=n, offset=8)
        vals = np.frombuffer(b, dtype="<f8", offset=8 + 8 * n)
        out[cols] = vals
    return out


def column_moments(A: DistMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Column means and sample standard deviations, replicated on all ranks.

    Two passes: partial sums reduced down grid columns give the means, then
    centered squares give the (h - 1)-divisor standard deviations.
    """
    if A.tag != "d":
        raise ValueError("column moments require the double-precision tag")
    if A.scheme is not DistScheme.MC_MR:
        raise ValueError("column moments expect an MC_MR matrix")
    h = A.height
    if h == 0:
        raise ValueError("column moments need at least one row")
    local = A.local.a
    sums = A.grid.col_comm.allreduce(ReduceOp.SUM, np.sum(local, axis=0))
    means_loc = sums / h
    if h >= 2:
        sq = np.sum((local - means_loc[None, :]) ** 2, axis=0) \
            if local.size else np.zeros(local.shape[1])
        ssq = A.grid.col_comm.allreduce(ReduceOp.SUM, sq)
        stds_loc = np.sqrt(ssq / (h - 1))
    else:
        stds_loc = np.zeros_like(means_loc)
    return _replicate_columns(A, means_loc), _replicate_columns(A, stds_loc)


def center_scale(A: DistMatrix, do_center: bool = True,
                 do_scale: bool = False) -> ScaledMatrix:
    """Subtract column means and/or divide by column standard deviations.

    Applied locally per owned element.  Scaling a zero-variance column is
    an error.
    """
    if A.tag != "d":
        raise ValueError("center/scale require the double-precision tag")
    X = A.redistribute(A.scheme)
    if not do_center and not do_scale:
        return ScaledMatrix(X)
    means, stds = column_moments(A)
    if do_scale and np.any(stds == 0.0):
        bad = int(np.argmin(stds))
        raise ValueError(f"zero-variance column {bad} cannot be scaled")
    cols = X.global_cols()
    if X.local.a.size:
        if do_center:
            X.local.a -= means[cols][None, :]
        if do_scale:
            X.local.a /= stds[cols][None, :]
    return ScaledMatrix(
        X,
        center=means if do_center else np.empty(0),
        scale=stds if do_scale else np.empty(0),
    )


def prcomp(A: DistMatrix, retx: bool = True, center: bool = True,
           scale: bool = False, tol=None) -> PcaResult:
    """Principal component analysis via the SVD of the centered data.

    ``retx`` and ``tol`` are accepted for signature compatibility and
    ignored.  Requires at least two observations and h >= w.
    """
    del retx, tol
    if A.height < 2:
        raise ValueError("pca needs at least two observations")
    if A.height < A.width:
        raise ValueError("pca expects at least as many observations as variables")
    scaled = center_scale(A, do_center=center, do_scale=scale)
    sigma, v = dist_svd_values_vt(scaled.matrix)
    sdev = (1.0 / math.sqrt(A.height - 1)) * sigma
    return PcaResult(sdev=sdev, rotation=v, center=scaled.center)
