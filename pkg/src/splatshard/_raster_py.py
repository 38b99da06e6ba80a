"""Pure-numpy compositing kernels (fallback for the compiled ``_raster_ext``).

Semantics, shared by both backends:

* a splat is a candidate for pixel (x, y) when the pixel center lies inside
  its truncated screen-space footprint (Mahalanobis^2 <= 9), the ray
  parameter ``t = d . (u - o)`` of its center is positive, the center lies
  within the splat's reach of the ray, and (when planes are given) the ray
  point ``o + t d`` satisfies every half-space;
* candidates are composited front to back in ascending ``(t, id)``;
* a candidate is accepted while the transmittance after it stays
  ``>= stop_T``.

Work is vectorized over (pixel, splat) pairs and over rank columns of a
padded per-pixel candidate table.
"""
import numpy as np


def _pairs(means2d, conic, alphas, rel, reach2, ids, bbox, dirs, origin,
           plane_n, plane_d, plane_closed, window):
    dt = means2d.dtype.type
    W = dirs.shape[1]
    wx0, wy0, wx1, wy1 = window
    bx0 = np.maximum(bbox[:, 0], wx0).astype(np.int64)
    by0 = np.maximum(bbox[:, 1], wy0).astype(np.int64)
    bx1 = np.minimum(bbox[:, 2], wx1).astype(np.int64)
    by1 = np.minimum(bbox[:, 3], wy1).astype(np.int64)
    w = np.maximum(bx1 - bx0, 0)
    h = np.maximum(by1 - by0, 0)
    counts = w * h
    total = int(counts.sum())
    if total == 0:
        return None
    sp = np.repeat(np.arange(len(counts)), counts)
    start = np.cumsum(counts) - counts
    local = np.arange(total) - start[sp]
    px = bx0[sp] + local % w[sp]
    py = by0[sp] + local // w[sp]

    dx = (px.astype(dt) + dt(0.5)) - means2d[sp, 0]
    dy = (py.astype(dt) + dt(0.5)) - means2d[sp, 1]
    m2 = conic[sp, 0] * dx * dx + dt(2.0) * conic[sp, 1] * dx * dy + conic[sp, 2] * dy * dy
    keep = m2 <= dt(9.0)
    sp, px, py, m2 = sp[keep], px[keep], py[keep], m2[keep]

    d = dirs[py, px]
    r = rel[sp]
    t = d[:, 0] * r[:, 0] + d[:, 1] * r[:, 1] + d[:, 2] * r[:, 2]
    q = r - t[:, None] * d
    keep = (t > 0) & (q[:, 0] * q[:, 0] + q[:, 1] * q[:, 1] + q[:, 2] * q[:, 2] <= reach2[sp])
    sp, px, py, m2, t, d = sp[keep], px[keep], py[keep], m2[keep], t[keep], d[keep]

    if plane_n.shape[0] > 0:
        x = origin[None, :] + t[:, None] * d
        inside = np.ones(len(t), dtype=bool)
        for m in range(plane_n.shape[0]):
            s = plane_n[m, 0] * x[:, 0] + plane_n[m, 1] * x[:, 1] + plane_n[m, 2] * x[:, 2] + plane_d[m]
            inside &= (s <= 0) if plane_closed[m] else (s < 0)
        sp, px, py, m2, t = sp[inside], px[inside], py[inside], m2[inside], t[inside]

    g = np.exp(-0.5 * m2.astype(np.float64)).astype(dt)
    sig = np.minimum(alphas[sp] * g, dt(0.99))
    pix = py * W + px
    order = np.lexsort((ids[sp], t, pix))
    return sp[order], pix[order], sig[order], g[order]


def _table(sp, pix, sig, g):
    """Pad sorted pairs into per-pixel rows; returns (pixels, counts, idx, sig, g)."""
    upix, first, counts = np.unique(pix, return_index=True, return_counts=True)
    row = np.repeat(np.arange(len(upix)), counts)
    rank = np.arange(len(pix)) - first[row]
    maxlen = int(counts.max())
    idx = np.full((len(upix), maxlen), -1, dtype=np.int64)
    S = np.zeros((len(upix), maxlen), dtype=sig.dtype)
    G = np.zeros((len(upix), maxlen), dtype=g.dtype)
    idx[row, rank] = sp
    S[row, rank] = sig
    G[row, rank] = g
    return upix, counts, idx, S, G


def _replay(counts, S, stop_T):
    """Per-column transmittance before each candidate and accepted-candidate counts."""
    rows, maxlen = S.shape
    T = np.ones(rows, dtype=S.dtype)
    alive = np.ones(rows, dtype=bool)
    Ts = np.zeros_like(S)
    used = np.zeros(rows, dtype=np.int64)
    one = S.dtype.type(1)
    for j in range(maxlen):
        test = T * (one - S[:, j])
        alive &= (j < counts) & ~(test < stop_T)
        Ts[:, j] = T
        T = np.where(alive, test, T)
        used += alive
    return Ts, T, used


def forward(means2d, conic, colors, alphas, rel, reach2, ids, bbox, tile_ptr, tile_idx,
            tile_size, tiles_x, dirs, origin, plane_n, plane_d, plane_closed, bg, stop_T,
            wx0, wy0, wx1, wy1, out_color, out_T, out_count):
    H, W = out_T.shape
    out_color[wy0:wy1, wx0:wx1] = bg
    out_T[wy0:wy1, wx0:wx1] = 1
    out_count[wy0:wy1, wx0:wx1] = 0
    found = _pairs(means2d, conic, alphas, rel, reach2, ids, bbox, dirs, origin,
                   plane_n, plane_d, plane_closed, (wx0, wy0, wx1, wy1))
    if found is None:
        return
    upix, counts, idx, S, _ = _table(*found)
    Ts, T, used = _replay(counts, S, stop_T)
    acc = np.zeros((len(upix), 3), dtype=S.dtype)
    for j in range(S.shape[1]):
        on = j < used
        if not on.any():
            break
        w = S[on, j] * Ts[on, j]
        acc[on] = acc[on] + colors[idx[on, j]] * w[:, None]
    py, px = np.divmod(upix, W)
    out_color[py, px] = acc + T[:, None] * bg[None, :]
    out_T[py, px] = T
    out_count[py, px] = used


def backward(means2d, conic, colors, alphas, rel, reach2, ids, bbox, tile_ptr, tile_idx,
             tile_size, tiles_x, dirs, origin, plane_n, plane_d, plane_closed, bg, stop_T,
             wx0, wy0, wx1, wy1, grad_color, grad_T, d_means2d, d_conic, d_colors, d_alphas):
    H, W = grad_T.shape
    n = means2d.shape[0]
    found = _pairs(means2d, conic, alphas, rel, reach2, ids, bbox, dirs, origin,
                   plane_n, plane_d, plane_closed, (wx0, wy0, wx1, wy1))
    if found is None:
        return
    upix, counts, idx, S, G = _table(*found)
    Ts, _, used = _replay(counts, S, stop_T)
    py, px = np.divmod(upix, W)
    gc = grad_color[py, px].astype(np.float64)
    gT = grad_T[py, px].astype(np.float64)
    R = np.broadcast_to(bg.astype(np.float64), gc.shape).copy()
    Q = np.ones(len(upix))
    fpx = px.astype(means2d.dtype) + means2d.dtype.type(0.5)
    fpy = py.astype(means2d.dtype) + means2d.dtype.type(0.5)
    for j in range(S.shape[1] - 1, -1, -1):
        on = j < used
        if not on.any():
            continue
        i = idx[on, j]
        sig = S[on, j].astype(np.float64)
        T = Ts[on, j].astype(np.float64)
        col = colors[i].astype(np.float64)
        d_col = gc[on] * (sig * T)[:, None]
        dsig = T * (np.sum(gc[on] * (col - R[on]), axis=1) - gT[on] * Q[on])
        R[on] = col * sig[:, None] + (1.0 - sig)[:, None] * R[on]
        Q[on] = (1.0 - sig) * Q[on]
        g = G[on, j]
        free = ~(alphas[i] * g > alphas.dtype.type(0.99))
        g = g.astype(np.float64)
        a = alphas[i].astype(np.float64)
        ddx = (fpx[on] - means2d[i, 0]).astype(np.float64)
        ddy = (fpy[on] - means2d[i, 1]).astype(np.float64)
        dm2 = dsig * a * g * -0.5
        cn = conic[i].astype(np.float64)
        parts = {
            "c0": d_col[:, 0], "c1": d_col[:, 1], "c2": d_col[:, 2],
            "a": np.where(free, dsig * g, 0.0),
            "m0": np.where(free, -dm2 * (2.0 * cn[:, 0] * ddx + 2.0 * cn[:, 1] * ddy), 0.0),
            "m1": np.where(free, -dm2 * (2.0 * cn[:, 1] * ddx + 2.0 * cn[:, 2] * ddy), 0.0),
            "k0": np.where(free, dm2 * ddx * ddx, 0.0),
            "k1": np.where(free, dm2 * 2.0 * ddx * ddy, 0.0),
            "k2": np.where(free, dm2 * ddy * ddy, 0.0),
        }
        acc = {k: np.bincount(i, weights=v, minlength=n) for k, v in parts.items()}
        d_colors[:, 0] += acc["c0"]
        d_colors[:, 1] += acc["c1"]
        d_colors[:, 2] += acc["c2"]
        d_alphas += acc["a"]
        d_means2d[:, 0] += acc["m0"]
        d_means2d[:, 1] += acc["m1"]
        d_conic[:, 0] += acc["k0"]
        d_conic[:, 1] += acc["k1"]
        d_conic[:, 2] += acc["k2"]
