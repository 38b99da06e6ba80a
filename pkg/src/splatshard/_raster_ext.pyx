# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-pixel compositing kernels.

Semantics are defined in ``_raster_py``; both backends must agree.  Every
pixel is processed independently with an exact per-ray (t, id) sort, so a
window render of one pixel reproduces the full-image value bit for bit.
"""
from libc.math cimport exp
from libc.stdlib cimport malloc, free, qsort

ctypedef fused real:
    float
    double

cdef struct Cand:
    double t
    long long id
    int idx
    double sigma
    double g


cdef int _cmp_cand(const void* pa, const void* pb) noexcept nogil:
    cdef const Cand* a = <const Cand*> pa
    cdef const Cand* b = <const Cand*> pb
    if a.t < b.t:
        return -1
    if a.t > b.t:
        return 1
    if a.id < b.id:
        return -1
    if a.id > b.id:
        return 1
    return 0


cdef inline void _sort(Cand* buf, int n) noexcept nogil:
    # tile lists arrive in camera-depth order, which is nearly the per-ray
    # (t, id) order, so insertion sort runs close to linear; fall back to
    # qsort for long lists
    cdef int i, j
    cdef Cand c
    if n > 512:
        qsort(buf, n, sizeof(Cand), _cmp_cand)
        return
    for i in range(1, n):
        c = buf[i]
        j = i - 1
        while j >= 0 and (buf[j].t > c.t or (buf[j].t == c.t and buf[j].id > c.id)):
            buf[j + 1] = buf[j]
            j -= 1
        buf[j + 1] = c


cdef inline int _gather(
    Cand* buf, int px, int py,
    const real[:, ::1] means2d, const real[:, ::1] conic, const real[::1] alphas,
    const real[:, ::1] rel, const real[::1] reach2, const long long[::1] ids,
    const int[::1] tile_ptr, const int[::1] tile_idx, int tile_size, int tiles_x,
    const real[:, :, ::1] dirs, const real[::1] origin,
    const real[:, ::1] plane_n, const real[::1] plane_d, const unsigned char[::1] plane_closed,
    const int[:, ::1] bbox,
) noexcept nogil:
    cdef int tile = (py // tile_size) * tiles_x + (px // tile_size)
    cdef int n = 0, p, i, m
    cdef real fx = <real>px + <real>0.5
    cdef real fy = <real>py + <real>0.5
    cdef real d0 = dirs[py, px, 0], d1 = dirs[py, px, 1], d2 = dirs[py, px, 2]
    cdef real dx, dy, m2, t, q0, q1, q2, x0, x1, x2, s, sig
    cdef double g
    cdef bint inside
    for p in range(tile_ptr[tile], tile_ptr[tile + 1]):
        i = tile_idx[p]
        if px < bbox[i, 0] or px >= bbox[i, 2] or py < bbox[i, 1] or py >= bbox[i, 3]:
            continue
        dx = fx - means2d[i, 0]
        dy = fy - means2d[i, 1]
        m2 = conic[i, 0] * dx * dx + <real>2.0 * conic[i, 1] * dx * dy + conic[i, 2] * dy * dy
        if not (m2 <= <real>9.0):
            continue
        t = d0 * rel[i, 0] + d1 * rel[i, 1] + d2 * rel[i, 2]
        if not (t > 0):
            continue
        q0 = rel[i, 0] - t * d0
        q1 = rel[i, 1] - t * d1
        q2 = rel[i, 2] - t * d2
        if q0 * q0 + q1 * q1 + q2 * q2 > reach2[i]:
            continue
        if plane_n.shape[0] > 0:
            x0 = origin[0] + t * d0
            x1 = origin[1] + t * d1
            x2 = origin[2] + t * d2
            inside = True
            for m in range(plane_n.shape[0]):
                s = plane_n[m, 0] * x0 + plane_n[m, 1] * x1 + plane_n[m, 2] * x2 + plane_d[m]
                if plane_closed[m]:
                    if not (s <= 0):
                        inside = False
                        break
                elif not (s < 0):
                    inside = False
                    break
            if not inside:
                continue
        g = exp(-0.5 * <double>m2)
        sig = alphas[i] * <real>g
        if sig > <real>0.99:
            sig = <real>0.99
        buf[n].t = t
        buf[n].id = ids[i]
        buf[n].idx = i
        buf[n].sigma = sig
        buf[n].g = <real>g
        n += 1
    _sort(buf, n)
    return n


def forward(
    const real[:, ::1] means2d, const real[:, ::1] conic, const real[:, ::1] colors,
    const real[::1] alphas, const real[:, ::1] rel, const real[::1] reach2,
    const long long[::1] ids, const int[:, ::1] bbox,
    const int[::1] tile_ptr, const int[::1] tile_idx, int tile_size, int tiles_x,
    const real[:, :, ::1] dirs, const real[::1] origin,
    const real[:, ::1] plane_n, const real[::1] plane_d, const unsigned char[::1] plane_closed,
    const real[::1] bg, double stop_T, int wx0, int wy0, int wx1, int wy1,
    real[:, :, ::1] out_color, real[:, ::1] out_T, int[:, ::1] out_count,
):
    cdef int max_list = 0, k, px, py, n, j, c
    for k in range(tile_ptr.shape[0] - 1):
        if tile_ptr[k + 1] - tile_ptr[k] > max_list:
            max_list = tile_ptr[k + 1] - tile_ptr[k]
    cdef Cand* buf = <Cand*> malloc((max_list + 1) * sizeof(Cand))
    if buf == NULL:
        raise MemoryError()
    cdef real T, test, sig, w
    cdef real acc[3]
    try:
        with nogil:
            for py in range(wy0, wy1):
                for px in range(wx0, wx1):
                    n = _gather(buf, px, py, means2d, conic, alphas, rel, reach2, ids,
                                tile_ptr, tile_idx, tile_size, tiles_x, dirs, origin,
                                plane_n, plane_d, plane_closed, bbox)
                    T = 1
                    acc[0] = 0
                    acc[1] = 0
                    acc[2] = 0
                    c = 0
                    for j in range(n):
                        sig = <real>buf[j].sigma
                        test = T * (<real>1 - sig)
                        if test < stop_T:
                            break
                        w = sig * T
                        acc[0] = acc[0] + colors[buf[j].idx, 0] * w
                        acc[1] = acc[1] + colors[buf[j].idx, 1] * w
                        acc[2] = acc[2] + colors[buf[j].idx, 2] * w
                        T = test
                        c += 1
                    out_color[py, px, 0] = acc[0] + T * bg[0]
                    out_color[py, px, 1] = acc[1] + T * bg[1]
                    out_color[py, px, 2] = acc[2] + T * bg[2]
                    out_T[py, px] = T
                    out_count[py, px] = c
    finally:
        free(buf)


def backward(
    const real[:, ::1] means2d, const real[:, ::1] conic, const real[:, ::1] colors,
    const real[::1] alphas, const real[:, ::1] rel, const real[::1] reach2,
    const long long[::1] ids, const int[:, ::1] bbox,
    const int[::1] tile_ptr, const int[::1] tile_idx, int tile_size, int tiles_x,
    const real[:, :, ::1] dirs, const real[::1] origin,
    const real[:, ::1] plane_n, const real[::1] plane_d, const unsigned char[::1] plane_closed,
    const real[::1] bg, double stop_T, int wx0, int wy0, int wx1, int wy1,
    const real[:, :, ::1] grad_color, const real[:, ::1] grad_T,
    double[:, ::1] d_means2d, double[:, ::1] d_conic, double[:, ::1] d_colors, double[::1] d_alphas,
):
    cdef int max_list = 0, k, px, py, n, j, c, i
    for k in range(tile_ptr.shape[0] - 1):
        if tile_ptr[k + 1] - tile_ptr[k] > max_list:
            max_list = tile_ptr[k + 1] - tile_ptr[k]
    cdef Cand* buf = <Cand*> malloc((max_list + 1) * sizeof(Cand))
    cdef double* Ts = <double*> malloc((max_list + 1) * sizeof(double))
    if buf == NULL or Ts == NULL:
        free(buf)
        free(Ts)
        raise MemoryError()
    cdef double T, test, sig, g, a, dsig, dm2, ddx, ddy, Q, gT
    cdef double gc[3]
    cdef double R[3]
    try:
        with nogil:
            for py in range(wy0, wy1):
                for px in range(wx0, wx1):
                    n = _gather(buf, px, py, means2d, conic, alphas, rel, reach2, ids,
                                tile_ptr, tile_idx, tile_size, tiles_x, dirs, origin,
                                plane_n, plane_d, plane_closed, bbox)
                    # replay the forward in the kernel's precision to recover T_i
                    T = 1
                    c = 0
                    for j in range(n):
                        sig = <real>buf[j].sigma
                        test = <real>(<real>T * (<real>1 - <real>sig))
                        if test < stop_T:
                            break
                        Ts[j] = T
                        T = test
                        c += 1
                    if c == 0:
                        continue
                    gc[0] = grad_color[py, px, 0]
                    gc[1] = grad_color[py, px, 1]
                    gc[2] = grad_color[py, px, 2]
                    gT = grad_T[py, px]
                    R[0] = bg[0]
                    R[1] = bg[1]
                    R[2] = bg[2]
                    Q = 1.0
                    for j in range(c - 1, -1, -1):
                        i = buf[j].idx
                        sig = buf[j].sigma
                        T = Ts[j]
                        d_colors[i, 0] += gc[0] * sig * T
                        d_colors[i, 1] += gc[1] * sig * T
                        d_colors[i, 2] += gc[2] * sig * T
                        dsig = T * (gc[0] * (colors[i, 0] - R[0]) + gc[1] * (colors[i, 1] - R[1])
                                    + gc[2] * (colors[i, 2] - R[2]) - gT * Q)
                        R[0] = colors[i, 0] * sig + (1.0 - sig) * R[0]
                        R[1] = colors[i, 1] * sig + (1.0 - sig) * R[1]
                        R[2] = colors[i, 2] * sig + (1.0 - sig) * R[2]
                        Q = (1.0 - sig) * Q
                        g = buf[j].g
                        a = alphas[i]
                        if alphas[i] * <real>g > <real>0.99:
                            continue
                        d_alphas[i] += dsig * g
                        dm2 = dsig * a * g * -0.5
                        ddx = <double>(<real>px + <real>0.5 - means2d[i, 0])
                        ddy = <double>(<real>py + <real>0.5 - means2d[i, 1])
                        d_means2d[i, 0] += -dm2 * (2.0 * conic[i, 0] * ddx + 2.0 * conic[i, 1] * ddy)
                        d_means2d[i, 1] += -dm2 * (2.0 * conic[i, 1] * ddx + 2.0 * conic[i, 2] * ddy)
                        d_conic[i, 0] += dm2 * ddx * ddx
                        d_conic[i, 1] += dm2 * 2.0 * ddx * ddy
                        d_conic[i, 2] += dm2 * ddy * ddy
    finally:
        free(buf)
        free(Ts)
