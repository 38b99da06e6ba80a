"""Backend selection and the array plumbing shared by both kernel backends.

The compiled extension is used when importable unless ``SPLATSHARD_PURE_PYTHON``
is set; ``use_backend`` switches at runtime (tests and the benchmark do).
"""
import os

import numpy as np

from . import _raster_py

try:
    from . import _raster_ext
except ImportError:  # pragma: no cover - exercised when the extension is not built
    _raster_ext = None

TILE_SIZE = 4

_backend = _raster_py if (_raster_ext is None or os.environ.get("SPLATSHARD_PURE_PYTHON")) else _raster_ext


def backend_name():
    return "compiled" if _backend is _raster_ext else "python"


def available_backends():
    return ["compiled", "python"] if _raster_ext is not None else ["python"]


def use_backend(name):
    global _backend
    if name == "compiled":
        if _raster_ext is None:
            raise RuntimeError("compiled extension not built")
        _backend = _raster_ext
    elif name == "python":
        _backend = _raster_py
    else:
        raise ValueError(f"unknown backend {name!r}")


def _bin_tiles(bbox, width, height, tile_size, depth=None):
    tiles_x = (width + tile_size - 1) // tile_size
    tiles_y = (height + tile_size - 1) // tile_size
    n_tiles = tiles_x * tiles_y
    if len(bbox) == 0:
        return np.zeros(n_tiles + 1, np.int32), np.zeros(0, np.int32), tiles_x
    tx0 = bbox[:, 0] // tile_size
    ty0 = bbox[:, 1] // tile_size
    tx1 = (bbox[:, 2] - 1) // tile_size + 1
    ty1 = (bbox[:, 3] - 1) // tile_size + 1
    w = (tx1 - tx0).astype(np.int64)
    h = (ty1 - ty0).astype(np.int64)
    counts = w * h
    sp = np.repeat(np.arange(len(bbox)), counts)
    local = np.arange(counts.sum()) - (np.cumsum(counts) - counts)[sp]
    tile = (ty0[sp] + local // w[sp]) * tiles_x + tx0[sp] + local % w[sp]
    # within a tile, list splats front to back so per-pixel sorting is cheap
    order = np.lexsort((depth[sp], tile)) if depth is not None else np.argsort(tile, kind="stable")
    ptr = np.zeros(n_tiles + 1, np.int64)
    np.cumsum(np.bincount(tile, minlength=n_tiles), out=ptr[1:])
    return ptr.astype(np.int32), sp[order].astype(np.int32), tiles_x


def _planes(planes, dtype):
    if planes is None or len(planes) == 0:
        return np.zeros((0, 3), dtype), np.zeros(0, dtype), np.zeros(0, np.uint8)
    n = np.ascontiguousarray([p.n for p in planes], dtype=dtype)
    d = np.ascontiguousarray([p.d for p in planes], dtype=dtype)
    closed = np.ascontiguousarray([p.closed for p in planes], dtype=np.uint8)
    return n, d, closed


def _args(proj, camera, planes, bg, stop_T, dtype, window):
    c = np.ascontiguousarray
    ptr, idx, tiles_x = _bin_tiles(proj.bbox, camera.width, camera.height, TILE_SIZE, proj.depth)
    pn, pd, pc = _planes(planes, dtype)
    if window is None:
        window = (0, 0, camera.width, camera.height)
    return [
        c(proj.means2d, dtype), c(proj.conic, dtype), c(proj.colors, dtype), c(proj.alphas, dtype),
        c(proj.rel, dtype), c(proj.reach2, dtype), c(proj.ids, np.int64), c(proj.bbox, np.int32),
        ptr, idx, TILE_SIZE, tiles_x,
        c(camera.pixel_dirs(), dtype), c(camera.center, dtype),
        pn, pd, pc, c(np.asarray(bg), dtype), float(stop_T), *[int(v) for v in window],
    ]


def composite(proj, camera, planes=None, bg=(0.0, 0.0, 0.0), stop_T=0.0, dtype=np.float64,
              window=None):
    """Front-to-back composite of a projection; returns (color, T, count) maps."""
    H, W = camera.height, camera.width
    color = np.zeros((H, W, 3), dtype)
    color[...] = np.asarray(bg, dtype)
    T = np.ones((H, W), dtype)
    count = np.zeros((H, W), np.int32)
    _backend.forward(*_args(proj, camera, planes, bg, stop_T, dtype, window), color, T, count)
    return color, T, count


def composite_backward(proj, camera, grad_color, grad_T, planes=None, bg=(0.0, 0.0, 0.0),
                       stop_T=0.0, dtype=np.float64, window=None):
    """Adjoint of :func:`composite`; per-visible-splat screen-space gradients."""
    n = len(proj)
    d_means2d = np.zeros((n, 2))
    d_conic = np.zeros((n, 3))
    d_colors = np.zeros((n, 3))
    d_alphas = np.zeros(n)
    _backend.backward(
        *_args(proj, camera, planes, bg, stop_T, dtype, window),
        np.ascontiguousarray(grad_color, dtype), np.ascontiguousarray(grad_T, dtype),
        d_means2d, d_conic, d_colors, d_alphas,
    )
    return d_means2d, d_conic, d_colors, d_alphas


def contributions(proj, camera, planes=None, dtype=np.float64):
    """Instrumented (pixel index, splat id) pairs that receive a nonzero opacity.

    Termination-free; used to count how many times each splat enters each ray.
    """
    a = _args(proj, camera, planes, (0.0, 0.0, 0.0), 0.0, dtype, None)
    means2d, conic, _, alphas, rel, reach2, ids, bbox = a[:8]
    dirs, origin, pn, pd, pc = a[12:17]
    out = _raster_py._pairs(means2d, conic, alphas, rel, reach2, ids, bbox, dirs, origin,
                            pn, pd, pc, tuple(a[19:23]))
    if out is None:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    sp, pix, sig, _ = out
    keep = sig > 0
    return pix[keep], ids[sp[keep]]
