"""Distributed dense kernels over MC_MR matrices: stationary-C GEMM,

LU with partial pivoting plus triangular solves, tall-skinny QR, a
right-vectors-only SVD, and a symmetric eigendecomposition.

All operations are collective over the matrix's grid and deterministic:
pivot ties break toward the smallest global row index, reductions run in
fixed rank order, and every kernel's gathered result is reproducible
across grid shapes for the same input.
"""

from __future__ import annotations

import struct

import numpy as np

from .distmat import DistMatrix, dist_norm, from_replicated
from .grid import DistScheme
from .localmat import LocalMatrix, gemm_jki, jacobi_svd, jacobi_sym_eig, local_qr
from .transport import encode_f64

_TAG_SWAP = 0x700010
_TAG_TSQR = 0x700020

DEFAULT_PANEL = 32
SINGULAR_RTOL = 1e-13  # relative to the max norm of the input


class SingularMatrixError(RuntimeError):
    pass


def _pack_array(arr: np.ndarray) -> bytes:
    h, w = arr.shape
    return struct.pack("<qq", h, w) + np.asarray(arr, dtype="<f8").tobytes(order="F")


def _unpack_array(data: bytes) -> np.ndarray:
    h, w = struct.unpack_from("<qq", data, 0)
    flat = np.frombuffer(data, dtype="<f8", offset=16)
    return flat.reshape((h, w), order="F").copy()


def _require_mc_mr(M: DistMatrix, name: str) -> DistMatrix:
    if M.scheme is not DistScheme.MC_MR:
        raise ValueError(f"{name} must be distributed MC_MR")
    if M.tag != "d":
        raise ValueError(f"{name} must have the double-precision tag")
    return M


def _aligned(M: DistMatrix) -> DistMatrix:
    """Views are realigned through a deep copy before dense kernels."""
    if M.row_align or M.col_align:
        return M.redistribute(M.scheme)
    return M


# -- GEMM ---------------------------------------------------------------


def _gather_panel_cols(A: DistMatrix, k0: int, k1: int) -> np.ndarray:
    """All of columns [k0, k1) for my rows: allgather within my grid row."""
    _, cl = A._layouts()
    lo, hi = cl.local_slice(k0, k1)
    ids = (A.global_cols()[lo:hi] - k0).astype("<i8")
    piece = A.local.a[:, lo:hi]
    payload = struct.pack("<q", len(ids)) + ids.tobytes() + _pack_array(piece)
    blocks = A.grid.row_comm.allgather_blocks(payload)
    slab = np.zeros((A.local.height, k1 - k0), order="F")
    for b in blocks:
        (n,) = struct.unpack_from("<q", b, 0)
        cols = np.frombuffer(b, dtype="<i8", count=n, offset=8)
        vals = _unpack_array(b[8 + 8 * n:])
        slab[:, cols] = vals
    return slab


def _gather_panel_rows(B: DistMatrix, k0: int, k1: int) -> np.ndarray:
    """All of rows [k0, k1) for my columns: allgather within my grid column."""
    rl, _ = B._layouts()
    lo, hi = rl.local_slice(k0, k1)
    ids = (B.global_rows()[lo:hi] - k0).astype("<i8")
    piece = B.local.a[lo:hi, :]
    payload = struct.pack("<q", len(ids)) + ids.tobytes() + _pack_array(piece)
    blocks = B.grid.col_comm.allgather_blocks(payload)
    slab = np.zeros((k1 - k0, B.local.width), order="F")
    for b in blocks:
        (n,) = struct.unpack_from("<q", b, 0)
        rows = np.frombuffer(b, dtype="<i8", count=n, offset=8)
        vals = _unpack_array(b[8 + 8 * n:])
        slab[rows, :] = vals
    return slab


def dist_gemm(alpha: float, A: DistMatrix, B: DistMatrix, beta: float,
              C: DistMatrix, nb: int = DEFAULT_PANEL) -> None:
    """C <- alpha*A*B + beta*C, stationary-C.

    For each width-``nb`` panel of the inner dimension, A's panel columns
    are replicated within process rows and B's panel rows within process
    columns; each rank then accumulates a local product.  Panel width only
    affects communication granularity, not results: accumulation order
    over the inner dimension is globally ascending for any ``nb``.
    """
    for M, name in ((A, "A"), (B, "B"), (C, "C")):
        _require_mc_mr(M, name)
    if A.grid is not B.grid or A.grid is not C.grid:
        raise ValueError("gemm operands must share one grid")
    if A.width != B.height or C.height != A.height or C.width != B.width:
        raise ValueError(
            f"gemm dimension mismatch: {A.height}x{A.width} * "
            f"{B.height}x{B.width} -> {C.height}x{C.width}"
        )
    if C.row_align or C.col_align:
        raise ValueError("gemm output must be an aligned matrix, not a view")
    if nb < 1:
        raise ValueError("panel width must be positive")
    A = _aligned(A)
    B = _aligned(B)
    if beta == 0.0:
        C.local.a[:, :] = 0.0
    elif beta != 1.0:
        C.local.a *= beta
    if alpha == 0.0 or A.width == 0:
        C.grid.world.barrier()
        return
    for k0 in range(0, A.width, nb):
        k1 = min(A.width, k0 + nb)
        a_slab = _gather_panel_cols(A, k0, k1)
        b_slab = _gather_panel_rows(B, k0, k1)
        gemm_jki(alpha, a_slab, b_slab, 1.0, C.local.a)


# -- LU ------------------------------------------------------------------


def _swap_rows(M: DistMatrix, i1: int, i2: int) -> None:
    """Swap global rows i1 and i2 across all grid columns (paired sends)."""
    if i1 == i2:
        return
    grid = M.grid
    rl, _ = M._layouts()
    r1, r2 = rl.owner_coord(i1), rl.owner_coord(i2)
    if r1 == r2:
        if grid.my_row == r1:
            a, b = rl.to_local(i1), rl.to_local(i2)
            tmp = M.local.a[a, :].copy()
            M.local.a[a, :] = M.local.a[b, :]
            M.local.a[b, :] = tmp
        return
    if grid.my_row == r1:
        mine, partner = rl.to_local(i1), r2
    elif grid.my_row == r2:
        mine, partner = rl.to_local(i2), r1
    else:
        return
    row = M.local.a[mine, :].copy()
    grid.col_comm.send(partner, _TAG_SWAP, encode_f64(row))
    theirs = np.frombuffer(grid.col_comm.recv(partner, _TAG_SWAP), dtype="<f8")
    M.local.a[mine, :] = theirs


def dist_lu_factor(A: DistMatrix) -> list[int]:
    """In-place LU with partial pivoting; returns the pivot vector.

    A is overwritten with the unit-lower factor below the diagonal and the
    upper factor on and above it.  Unblocked right-looking: each step finds
    the pivot by a located max-abs reduction down the owning grid column
    (ties to the smallest global row), swaps rows, scales, and applies a
    rank-1 update to the trailing submatrix.
    """
    _require_mc_mr(A, "A")
    n = A.height
    if A.width != n:
        raise ValueError(f"lu requires a square matrix, got {n}x{A.width}")
    if A.row_align or A.col_align:
        raise ValueError("lu operates on an aligned matrix, not a view")
    grid = A.grid
    rl, cl = A._layouts()
    a = A.local.a
    tol = SINGULAR_RTOL * dist_norm("max", A)
    piv: list[int] = []
    for k in range(n):
        kr, kc = rl.owner_coord(k), cl.owner_coord(k)
        # pivot search within the grid column owning column k
        if grid.my_col == kc:
            lo = rl.local_slice(k, n)[0]
            lk = cl.to_local(k)
            col = a[lo:, lk]
            if col.size:
                t = int(np.argmax(np.abs(col)))
                cand = (float(col[t]), int(rl.to_global(lo + t)))
            else:
                cand = (0.0, 1 << 62)  # loses every tie: huge index
            mag, prow = grid.col_comm.allreduce_maxabsloc([cand])[0]
            found = encode_f64([mag, float(prow)])
        else:
            found = b""
        found = grid.row_comm.broadcast(kc, found)
        mag, prow = np.frombuffer(found, dtype="<f8")
        prow = int(prow)
        if mag < tol or mag == 0.0:
            raise SingularMatrixError("singular matrix")
        piv.append(prow)
        _swap_rows(A, k, prow)
        # scale the sub-diagonal piece of column k by 1/pivot
        if grid.my_col == kc:
            lk = cl.to_local(k)
            if grid.my_row == kr:
                pval = encode_f64([a[rl.to_local(k), lk]])
            else:
                pval = b""
            pivot = np.frombuffer(grid.col_comm.broadcast(kr, pval), "<f8")[0]
            lo = rl.local_slice(k + 1, n)[0]
            a[lo:, lk] /= pivot
            lpiece = encode_f64(a[lo:, lk])
        else:
            lpiece = b""
        lcol = np.frombuffer(grid.row_comm.broadcast(kc, lpiece), dtype="<f8")
        # row k piece right of the diagonal
        if grid.my_row == kr:
            hi = cl.local_slice(k + 1, n)[0]
            upiece = encode_f64(a[rl.to_local(k), hi:])
        else:
            upiece = b""
        urow = np.frombuffer(grid.col_comm.broadcast(kr, upiece), dtype="<f8")
        rlo = rl.local_slice(k + 1, n)[0]
        clo = cl.local_slice(k + 1, n)[0]
        if lcol.size and urow.size:
            a[rlo:, clo:] -= np.outer(lcol, urow)
    return piv


def dist_lu_solve(LU: DistMatrix, piv: list[int], B: DistMatrix) -> None:
    """Overwrite B with the solution of A X = B given A's in-place LU.

    Applies the recorded row swaps, then forward- and back-substitutes;
    each step broadcasts the current solution row along grid columns and
    the L/U column piece along grid rows.
    """
    _require_mc_mr(LU, "LU")
    _require_mc_mr(B, "B")
    if LU.grid is not B.grid:
        raise ValueError("solve operands must share one grid")
    n = LU.height
    if B.height != n:
        raise ValueError(f"rhs height {B.height} does not match system size {n}")
    if B.row_align or B.col_align:
        raise ValueError("solve overwrites an aligned matrix, not a view")
    grid = LU.grid
    rl, cl = LU._layouts()
    lu = LU.local.a
    b = B.local.a
    for k, p in enumerate(piv):
        _swap_rows(B, k, p)
    # forward substitution with the unit lower factor
    for k in range(n):
        kr, kc = rl.owner_coord(k), cl.owner_coord(k)
        if grid.my_row == kr:
            payload = encode_f64(b[rl.to_local(k), :])
        else:
            payload = b""
        bk = np.frombuffer(grid.col_comm.broadcast(kr, payload), dtype="<f8")
        if grid.my_col == kc:
            lo = rl.local_slice(k + 1, n)[0]
            piece = encode_f64(lu[lo:, cl.to_local(k)])
        else:
            piece = b""
        lcol = np.frombuffer(grid.row_comm.broadcast(kc, piece), dtype="<f8")
        lo = rl.local_slice(k + 1, n)[0]
        if lcol.size and bk.size:
            b[lo:, :] -= np.outer(lcol, bk)
    # back substitution with the upper factor
    for k in range(n - 1, -1, -1):
        kr, kc = rl.owner_coord(k), cl.owner_coord(k)
        if grid.my_row == kr:
            if grid.my_col == kc:
                dpay = encode_f64([lu[rl.to_local(k), cl.to_local(k)]])
            else:
                dpay = b""
            ukk = np.frombuffer(grid.row_comm.broadcast(kc, dpay), "<f8")[0]
            b[rl.to_local(k), :] /= ukk
            payload = encode_f64(b[rl.to_local(k), :])
        else:
            payload = b""
        bk = np.frombuffer(grid.col_comm.broadcast(kr, payload), dtype="<f8")
        if grid.my_col == kc:
            hi = rl.local_slice(0, k)[1]
            piece = encode_f64(lu[:hi, cl.to_local(k)])
        else:
            piece = b""
        ucol = np.frombuffer(grid.row_comm.broadcast(kc, piece), dtype="<f8")
        hi = rl.local_slice(0, k)[1]
        if ucol.size and bk.size:
            b[:hi, :] -= np.outer(ucol, bk)


# -- TSQR and factorization-based spectra ----------------------------------


def _reduce_factor(block: np.ndarray, w: int) -> np.ndarray:
    """QR-reduce a stacked block to w x w once it has enough rows."""
    if block.shape[0] >= w:
        _, R = local_qr(LocalMatrix.from_array(block))
        return R.a
    return block


def tsqr(A: DistMatrix) -> LocalMatrix:
    """R factor of a tall-skinny VC_STAR matrix, replicated on all ranks.

    Local QR per rank, then a binary combining tree: partners exchange
    R factors and the lower rank re-factors the stacked pair; a straggler
    at an odd level folds into the nearest lower participant.  R carries
    the non-negative-diagonal convention.
    """
    if A.scheme is not DistScheme.VC_STAR:
        raise ValueError("tsqr input must be distributed VC_STAR")
    if A.tag != "d":
        raise ValueError("tsqr requires the double-precision tag")
    h, w = A.height, A.width
    if h < w:
        raise ValueError(f"tsqr requires height >= width, got {h}x{w}")
    world = A.grid.world
    me = world.rank
    R = _reduce_factor(A.local.a.astype(np.float64, copy=True), w)
    active = list(range(world.size))
    while len(active) > 1:
        nxt = []
        i = 0
        while i < len(active):
            if i + 1 < len(active):
                lower, upper = active[i], active[i + 1]
                if me == upper:
                    world.send(lower, _TAG_TSQR, _pack_array(R))
                elif me == lower:
                    other = _unpack_array(world.recv(upper, _TAG_TSQR))
                    R = _reduce_factor(np.vstack([R, other]), w)
                nxt.append(lower)
                i += 2
            else:
                straggler, host = active[i], nxt[-1]
                if me == straggler:
                    world.send(host, _TAG_TSQR, _pack_array(R))
                elif me == host:
                    other = _unpack_array(world.recv(straggler, _TAG_TSQR))
                    R = _reduce_factor(np.vstack([R, other]), w)
                i += 1
        active = nxt
    final = world.broadcast(0, _pack_array(R) if me == 0 else b"")
    return LocalMatrix.from_array(_unpack_array(final))


def dist_svd_values_vt(A: DistMatrix) -> tuple[np.ndarray, LocalMatrix]:
    """Singular values (descending) and right singular vectors of a tall

    MC_MR matrix.  Reduces to the replicated R factor via TSQR, then every
    rank runs the same Jacobi SVD on it, so results are identical on all
    ranks without further communication.
    """
    if A.tag != "d":
        raise ValueError("svd requires the double-precision tag")
    if A.height < A.width:
        raise ValueError(
            f"svd requires height >= width, got {A.height}x{A.width}"
        )
    R = tsqr(A.redistribute(DistScheme.VC_STAR))
    return jacobi_svd(R)


def hermitian_eig(A: DistMatrix, uplo: str = "LOWER") -> tuple[np.ndarray, DistMatrix]:
    """Eigendecomposition of a symmetric matrix; lower triangle authoritative.

    Gathers to a full replica and solves redundantly on every rank (a
    correctness-first fallback, not a scalable eigensolver).  Returns
    ascending eigenvalues and the replicated eigenvector matrix.
    """
    if uplo != "LOWER":
        raise ValueError("only the LOWER triangle convention is supported")
    if A.tag != "d":
        raise ValueError("eig requires the double-precision tag")
    if A.height != A.width:
        raise ValueError(f"eig requires a square matrix, got {A.height}x{A.width}")
    rep = A.redistribute(DistScheme.STAR_STAR)
    w, X = jacobi_sym_eig(rep.local)
    return w, from_replicated(A.grid, X)
