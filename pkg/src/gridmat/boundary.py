"""Flat boundary for dynamic-language bindings.

Every entry point is a plain function in a name registry, suffixed ``_d``
or ``_i`` where it depends on the datatype, so a caller can assemble the
symbol name as ``base + "_" + tag``.  Matrices never cross the boundary as
data: they are referenced by integer handles; scalars and small vectors
are returned by value.  Errors are reported as a nonzero status plus a
last-error string (see :func:`invoke`), never as exceptions.

The boundary runs single-rank (a private 1x1 grid); it exposes the
interface layer, not the SPMD launch path.  A live-object counter tracks
handle create/destroy pairs for leak tests.
"""

from __future__ import annotations

import io
import itertools
from typing import Any, Callable

from .algorithms import dist_gemm, hermitian_eig
from .distmat import DistMatrix, axpy as _axpy, dist_norm, from_replicated, print_matrix
from .grid import Grid, make_grid
from .stats import center_scale, prcomp
from .tableio import TableFormat, read_table_dist
from .transport import single_world

SYMBOLS: dict[str, Callable] = {}

_handles: dict[int, DistMatrix] = {}
_ids = itertools.count(1)
_live = 0
_last_error = ""
_default_grid: Grid | None = None


def _grid() -> Grid:
    global _default_grid
    if _default_grid is None:
        _default_grid = make_grid(single_world())
    return _default_grid


def _register(m: DistMatrix) -> int:
    global _live
    h = next(_ids)
    _handles[h] = m
    _live += 1
    return h


def _lookup(handle: int, tag: str) -> DistMatrix:
    m = _handles.get(handle)
    if m is None:
        raise LookupError(f"invalid matrix handle {handle}")
    if m.tag != tag:
        raise TypeError(
            f"handle {handle} holds a {m.tag!r} matrix, not {tag!r}"
        )
    return m


def symbol(name: str) -> Callable:
    def deco(fn: Callable) -> Callable:
        SYMBOLS[name] = fn
        return fn
    return deco


def invoke(name: str, args: list) -> tuple[int, Any]:
    """Call a boundary symbol: (0, result) on success, else (status, None)

    with the message available from :func:`last_error`.
    """
    global _last_error
    fn = SYMBOLS.get(name)
    if fn is None:
        _last_error = f"unknown boundary symbol {name!r}"
        return 2, None
    try:
        return 0, fn(*args)
    except Exception as exc:  # noqa: BLE001 - boundary converts to status codes
        _last_error = str(exc)
        return 1, None


@symbol("last_error")
def last_error() -> str:
    return _last_error


@symbol("live_count")
def live_count() -> int:
    """Number of currently live native matrix objects (leak checks)."""
    return _live


def _make_typed_symbols() -> None:
    for tag in ("d", "i"):

        def create(height: int = 0, width: int = 0, tag=tag) -> int:
            return _register(DistMatrix.create(_grid(), height, width, tag))

        def destroy(handle: int, tag=tag) -> None:
            global _live
            _lookup(handle, tag)
            del _handles[handle]
            _live -= 1

        def get(handle: int, i: int, j: int, tag=tag):
            return _handles_get(handle, tag).get_global(i, j)

        def set_(handle: int, i: int, j: int, v, tag=tag) -> None:
            _handles_get(handle, tag).set_global(i, j, v)

        def height(handle: int, tag=tag) -> int:
            return _handles_get(handle, tag).height

        def width(handle: int, tag=tag) -> int:
            return _handles_get(handle, tag).width

        def ldim(handle: int, tag=tag) -> int:
            return _handles_get(handle, tag).local.ldim

        def empty(handle: int, tag=tag) -> None:
            # release storage: the handle becomes a 0 x 0 matrix
            m = _handles_get(handle, tag)
            m.copy_from(DistMatrix.create(_grid(), 0, 0, tag))

        def fill(handle: int, seed: int, tag=tag) -> None:
            _handles_get(handle, tag).fill_uniform(seed)

        def copy(src: int, dst: int, tag=tag) -> None:
            source = _handles_get(src, tag)
            target = _handles.get(dst)
            if target is None:
                raise LookupError(f"invalid matrix handle {dst}")
            target.copy_from(source)

        def view(handle: int, r0: int, r1: int, c0: int, c1: int, tag=tag) -> int:
            return _register(_handles_get(handle, tag).view(r0, r1, c0, c1))

        def axpy(alpha: float, x: int, y: int, tag=tag) -> None:
            _axpy(alpha, _handles_get(x, tag), _handles_get(y, tag))

        suffix = f"_{tag}"
        SYMBOLS["create" + suffix] = create
        SYMBOLS["destroy" + suffix] = destroy
        SYMBOLS["get" + suffix] = get
        SYMBOLS["set" + suffix] = set_
        SYMBOLS["height" + suffix] = height
        SYMBOLS["width" + suffix] = width
        SYMBOLS["ldim" + suffix] = ldim
        SYMBOLS["empty" + suffix] = empty
        SYMBOLS["fill" + suffix] = fill
        SYMBOLS["copy" + suffix] = copy
        SYMBOLS["view" + suffix] = view
        SYMBOLS["axpy" + suffix] = axpy


def _handles_get(handle: int, tag: str) -> DistMatrix:
    return _lookup(handle, tag)


_make_typed_symbols()


@symbol("gemm_d")
def gemm_d(alpha: float, a: int, b: int, beta: float, c: int) -> None:
    dist_gemm(alpha, _lookup(a, "d"), _lookup(b, "d"), beta, _lookup(c, "d"))


@symbol("maxnorm_d")
def maxnorm_d(handle: int) -> float:
    return dist_norm("max", _lookup(handle, "d"))


@symbol("frobenius_d")
def frobenius_d(handle: int) -> float:
    return dist_norm("frobenius", _lookup(handle, "d"))


@symbol("svd_d")
def svd_d(handle: int) -> dict:
    """Right-vectors-only SVD: singular values by value, V as a new handle."""
    from .algorithms import dist_svd_values_vt

    sigma, v = dist_svd_values_vt(_lookup(handle, "d"))
    vh = _register(from_replicated(_grid(), v))
    return {"sigma": [float(s) for s in sigma], "v": vh}


@symbol("eig_d")
def eig_d(handle: int) -> dict:
    w, x = hermitian_eig(_lookup(handle, "d"))
    xh = _register(x)
    return {"values": [float(v) for v in w], "x": xh}


@symbol("scale_d")
def scale_d(handle: int, do_center: bool, do_scale: bool) -> dict:
    scaled = center_scale(_lookup(handle, "d"), do_center, do_scale)
    return {
        "matrix": _register(scaled.matrix),
        "center": [float(v) for v in scaled.center],
        "scale": [float(v) for v in scaled.scale],
    }


@symbol("prcomp_d")
def prcomp_d(handle: int, center: bool = True, scale: bool = False) -> dict:
    res = prcomp(_lookup(handle, "d"), center=center, scale=scale)
    rot = _register(from_replicated(_grid(), res.rotation))
    return {
        "sdev": [float(s) for s in res.sdev],
        "rotation": rot,
        "center": [float(v) for v in res.center],
    }


@symbol("print_d")
def print_d(handle: int) -> str:
    sink = io.StringIO()
    print_matrix(_lookup(handle, "d"), sink)
    return sink.getvalue()


@symbol("print_i")
def print_i(handle: int) -> str:
    sink = io.StringIO()
    print_matrix(_lookup(handle, "i"), sink)
    return sink.getvalue()


@symbol("readtable_d")
def readtable_d(path: str) -> int:
    return _register(read_table_dist(path, _grid(), TableFormat()))
