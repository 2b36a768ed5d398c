"""Column-major dense matrix on one rank, plus the local kernels the

distributed algorithms compose: GEMM, Householder QR, one-sided Jacobi
SVD, a Jacobi symmetric eigensolver, and norms.

Element (i, j) lives at ``data[i + j*ldim]``; storage is a Fortran-ordered
numpy array so slices of larger buffers keep their leading dimension.
Datatype tags: ``d`` (float64) and ``i`` (int64).  Factorizations require
tag ``d``; the integer tag supports storage, get/set, axpy-style addition,
and norms only.

Sign conventions are fixed so results compare deterministically across
implementations: QR produces a non-negative R diagonal; singular vectors
and eigenvectors are flipped so each column's largest-magnitude entry is
positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TAGS = ("d", "i")
_DTYPES = {"d": np.float64, "i": np.int64}

JACOBI_MAX_SWEEPS = 30
JACOBI_TOL = 1e-14  # scaled by the squared Frobenius norm


class ConvergenceError(RuntimeError):
    """Jacobi iteration failed to reach its threshold within the sweep cap."""


# -- deterministic fill -------------------------------------------------

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def splitmix_stream(seed: int, counters: np.ndarray) -> np.ndarray:
    """k-th output of a SplitMix64 stream seeded with ``seed``, vectorized.

    Counter-based: output depends only on (seed, k), so any slice of the
    stream can be generated independently.
    """
    with np.errstate(over="ignore"):
        z = (np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
             + (counters.astype(np.uint64) + np.uint64(1)) * np.uint64(_GAMMA))
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))


def uniform_from_counters(seed: int, counters: np.ndarray) -> np.ndarray:
    """Map stream outputs to float64 in [-1, 1) using the top 53 bits."""
    bits = splitmix_stream(seed, counters)
    u = (bits >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
    return 2.0 * u - 1.0


def ints_from_counters(seed: int, counters: np.ndarray) -> np.ndarray:
    """Deterministic integers in [-1000, 1000] for the integer tag."""
    bits = splitmix_stream(seed, counters)
    return (bits % np.uint64(2001)).astype(np.int64) - 1000


@dataclass
class LocalMatrix:
    """Dense column-major matrix owned entirely by one rank."""

    a: np.ndarray
    tag: str = "d"

    @classmethod
    def make(cls, height: int, width: int, tag: str = "d") -> "LocalMatrix":
        if tag not in TAGS:
            raise ValueError(f"unknown datatype tag {tag!r}")
        if height < 0 or width < 0:
            raise ValueError("matrix dimensions must be non-negative")
        return cls(np.zeros((height, width), dtype=_DTYPES[tag], order="F"), tag)

    @classmethod
    def from_array(cls, arr: np.ndarray, tag: str = "d") -> "LocalMatrix":
        return cls(np.asfortranarray(np.asarray(arr, dtype=_DTYPES[tag])), tag)

    @property
    def height(self) -> int:
        return self.a.shape[0]

    @property
    def width(self) -> int:
        return self.a.shape[1]

    @property
    def ldim(self) -> int:
        """Stride between consecutive columns; >= max(1, height)."""
        if self.a.shape[1] > 1:
            return self.a.strides[1] // self.a.itemsize
        return max(1, self.a.shape[0])

    def _check_bounds(self, i: int, j: int) -> None:
        if not (0 <= i < self.height and 0 <= j < self.width):
            raise IndexError(
                f"index ({i},{j}) out of bounds for {self.height}x{self.width}"
            )

    def get(self, i: int, j: int):
        self._check_bounds(i, j)
        v = self.a[i, j]
        return float(v) if self.tag == "d" else int(v)

    def set(self, i: int, j: int, v) -> None:
        self._check_bounds(i, j)
        self.a[i, j] = v

    def fill_uniform(self, seed: int) -> None:
        """Reproducible fill from (seed, height, width) alone.

        Element (i, j) uses stream counter i + j*height, so the fill is a
        pure function of the seed and shape.
        """
        h, w = self.a.shape
        if h == 0 or w == 0:
            return
        counters = (np.arange(h, dtype=np.uint64)[:, None]
                    + np.arange(w, dtype=np.uint64)[None, :] * np.uint64(h))
        if self.tag == "d":
            self.a[:, :] = uniform_from_counters(seed, counters)
        else:
            self.a[:, :] = ints_from_counters(seed, counters)

    def copy(self) -> "LocalMatrix":
        return LocalMatrix(np.asfortranarray(self.a.copy()), self.tag)


# -- kernels ------------------------------------------------------------


def gemm_jki(alpha: float, A: np.ndarray, B: np.ndarray, beta: float,
             C: np.ndarray) -> None:
    """C <- alpha*A*B + beta*C with a fixed j-k-i loop nest (i vectorized).

    The per-element accumulation order over k is therefore identical for
    any partitioning of B's rows into panels, which keeps distributed GEMM
    bitwise reproducible across panel widths and grid shapes.
    """
    m, k = A.shape
    k2, n = B.shape
    if k != k2 or C.shape != (m, n):
        raise ValueError(f"gemm shapes {A.shape} x {B.shape} -> {C.shape}")
    if beta == 0.0:
        C[:, :] = 0.0
    elif beta != 1.0:
        C *= beta
    if alpha == 0.0:
        return
    for j in range(n):
        cj = C[:, j]
        bj = B[:, j]
        for kk in range(k):
            s = alpha * bj[kk]
            if s != 0.0:
                cj += s * A[:, kk]


def local_gemm(alpha: float, A: LocalMatrix, B: LocalMatrix, beta: float,
               C: LocalMatrix) -> None:
    for M in (A, B, C):
        if M.tag != "d":
            raise ValueError("gemm requires the double-precision tag")
    if A.width != B.height or C.height != A.height or C.width != B.width:
        raise ValueError(
            f"gemm dimension mismatch: {A.height}x{A.width} * "
            f"{B.height}x{B.width} -> {C.height}x{C.width}"
        )
    gemm_jki(alpha, A.a, B.a, beta, C.a)


def local_qr(A: LocalMatrix) -> tuple[LocalMatrix, LocalMatrix]:
    """Householder QR of a tall matrix: A = Q R, R with non-negative diagonal.

    Rank-deficient input yields zero diagonal entries in R.
    """
    if A.tag != "d":
        raise ValueError("qr requires the double-precision tag")
    p, q = A.height, A.width
    if p < q:
        raise ValueError(f"qr requires height >= width, got {p}x{q}")
    R = np.asfortranarray(A.a.astype(np.float64, copy=True))
    reflectors: list[tuple[int, np.ndarray, float]] = []
    for k in range(q):
        x = R[k:, k]
        normx = math.sqrt(float(x @ x))
        if normx == 0.0:
            continue
        alpha = -math.copysign(normx, x[0])
        v = x.copy()
        v[0] -= alpha
        vtv = float(v @ v)
        if vtv == 0.0:
            continue
        betak = 2.0 / vtv
        R[k:, k:] -= betak * np.outer(v, v @ R[k:, k:])
        R[k:, k] = 0.0
        R[k, k] = alpha
        reflectors.append((k, v, betak))
    Q = np.zeros((p, q), order="F")
    for k in range(min(p, q)):
        Q[k, k] = 1.0
    for k, v, betak in reversed(reflectors):
        Q[k:, :] -= betak * np.outer(v, v @ Q[k:, :])
    Rsq = np.asfortranarray(np.triu(R[:q, :]))
    for k in range(q):
        if Rsq[k, k] < 0.0:
            Rsq[k, :] *= -1.0
            Q[:, k] *= -1.0
    return LocalMatrix(Q, "d"), LocalMatrix(Rsq, "d")


def _normalize_column_signs(V: np.ndarray) -> None:
    # flip so each column's largest-magnitude entry is positive
    for k in range(V.shape[1]):
        col = V[:, k]
        idx = int(np.argmax(np.abs(col)))
        if col[idx] < 0.0:
            col *= -1.0


def jacobi_svd(A: LocalMatrix) -> tuple[np.ndarray, LocalMatrix]:
    """One-sided Jacobi SVD of a p x q matrix with p >= q.

    Returns singular values descending and the right singular vectors V
    (q x q).  Column pairs are rotated until every off-diagonal inner
    product falls below JACOBI_TOL times the squared Frobenius norm.
    """
    if A.tag != "d":
        raise ValueError("svd requires the double-precision tag")
    p, q = A.height, A.width
    if p < q:
        raise ValueError(f"svd requires height >= width, got {p}x{q}")
    M = np.asfortranarray(A.a.astype(np.float64, copy=True))
    V = np.eye(q, order="F")
    fro2 = float(np.sum(M * M))
    thresh = JACOBI_TOL * fro2
    if fro2 > 0.0:
        for _sweep in range(JACOBI_MAX_SWEEPS):
            rotated = False
            for i in range(q - 1):
                for j in range(i + 1, q):
                    mi, mj = M[:, i], M[:, j]
                    gamma = float(mi @ mj)
                    if abs(gamma) <= thresh:
                        continue
                    rotated = True
                    aii = float(mi @ mi)
                    ajj = float(mj @ mj)
                    zeta = (ajj - aii) / (2.0 * gamma)
                    t = math.copysign(1.0, zeta) / (
                        abs(zeta) + math.sqrt(1.0 + zeta * zeta)
                    )
                    cs = 1.0 / math.sqrt(1.0 + t * t)
                    sn = cs * t
                    ui = cs * mi - sn * mj
                    uj = sn * mi + cs * mj
                    M[:, i], M[:, j] = ui, uj
                    vi, vj = V[:, i].copy(), V[:, j].copy()
                    V[:, i] = cs * vi - sn * vj
                    V[:, j] = sn * vi + cs * vj
            if not rotated:
                break
        else:
            raise ConvergenceError(
                f"jacobi svd did not converge in {JACOBI_MAX_SWEEPS} sweeps"
            )
    sigma = np.sqrt(np.sum(M * M, axis=0))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    V = np.asfortranarray(V[:, order])
    _normalize_column_signs(V)
    return sigma, LocalMatrix(V, "d")


def jacobi_sym_eig(A: LocalMatrix) -> tuple[np.ndarray, LocalMatrix]:
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    The lower triangle is authoritative: the input is symmetrized from it
    first.  Returns eigenvalues ascending and orthonormal eigenvectors X
    with the positive-largest-entry column sign rule.
    """
    if A.tag != "d":
        raise ValueError("eig requires the double-precision tag")
    n = A.height
    if A.width != n:
        raise ValueError(f"eig requires a square matrix, got {n}x{A.width}")
    L = np.tril(A.a.astype(np.float64, copy=True))
    S = np.asfortranarray(L + L.T - np.diag(np.diag(L)))
    X = np.eye(n, order="F")
    fro2 = float(np.sum(S * S))
    thresh = JACOBI_TOL * fro2
    if fro2 > 0.0:
        for _sweep in range(JACOBI_MAX_SWEEPS):
            rotated = False
            for piv in range(n - 1):
                for q_ in range(piv + 1, n):
                    apq = float(S[piv, q_])
                    if abs(apq) <= thresh:
                        continue
                    rotated = True
                    theta = (S[q_, q_] - S[piv, piv]) / (2.0 * apq)
                    t = math.copysign(1.0, theta) / (
                        abs(theta) + math.sqrt(1.0 + theta * theta)
                    )
                    cs = 1.0 / math.sqrt(1.0 + t * t)
                    sn = cs * t
                    cp, cq = S[:, piv].copy(), S[:, q_].copy()
                    S[:, piv] = cs * cp - sn * cq
                    S[:, q_] = sn * cp + cs * cq
                    rp, rq = S[piv, :].copy(), S[q_, :].copy()
                    S[piv, :] = cs * rp - sn * rq
                    S[q_, :] = sn * rp + cs * rq
                    S[piv, q_] = 0.0
                    S[q_, piv] = 0.0
                    xp, xq = X[:, piv].copy(), X[:, q_].copy()
                    X[:, piv] = cs * xp - sn * xq
                    X[:, q_] = sn * xp + cs * xq
            if not rotated:
                break
        else:
            raise ConvergenceError(
                f"jacobi eig did not converge in {JACOBI_MAX_SWEEPS} sweeps"
            )
    w = np.diag(S).copy()
    order = np.argsort(w, kind="stable")
    w = w[order]
    X = np.asfortranarray(X[:, order])
    _normalize_column_signs(X)
    return w, LocalMatrix(X, "d")


def local_norm(kind: str, A: LocalMatrix) -> float:
    """max = largest |a_ij| (0 for empty); frobenius = sqrt(sum of squares)."""
    if A.a.size == 0:
        return 0.0
    vals = A.a.astype(np.float64, copy=False)
    if kind == "max":
        return float(np.max(np.abs(vals)))
    if kind == "frobenius":
        return math.sqrt(float(np.sum(vals * vals)))
    raise ValueError(f"unknown norm kind {kind!r}")
