# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled semi-global path aggregation kernel.

Bit-identical to the numpy fallback: int64 recurrence, per-direction values
and the final sum both saturate at 65535.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()

DEF SATURATE = 65535

BACKEND = "cython"


cdef void _line_step(long long[:, :, ::1] L, long long[:, :, ::1] c,
                     int y, int x, int py, int px,
                     long long p1, long long p2, int D) noexcept nogil:
    cdef int d
    cdef long long min_prev = L[py, px, 0]
    cdef long long cand, v
    for d in range(1, D):
        if L[py, px, d] < min_prev:
            min_prev = L[py, px, d]
    for d in range(D):
        cand = L[py, px, d]
        if d > 0 and L[py, px, d - 1] + p1 < cand:
            cand = L[py, px, d - 1] + p1
        if d < D - 1 and L[py, px, d + 1] + p1 < cand:
            cand = L[py, px, d + 1] + p1
        if min_prev + p2 < cand:
            cand = min_prev + p2
        v = c[y, x, d] + cand - min_prev
        if v > SATURATE:
            v = SATURATE
        L[y, x, d] = v


cdef void _aggregate_direction(long long[:, :, ::1] c, long long[:, :, ::1] L,
                               long long p1, long long p2,
                               int dx, int dy) noexcept nogil:
    cdef int H = c.shape[0]
    cdef int W = c.shape[1]
    cdef int D = c.shape[2]
    cdef int y, x, d, py, px
    cdef int y0, y1, ystep, x0, x1, xstep
    if dy > 0 or (dy == 0 and dx >= 0):
        y0, y1, ystep = 0, H, 1
    else:
        y0, y1, ystep = H - 1, -1, -1
    if dx >= 0:
        x0, x1, xstep = 0, W, 1
    else:
        x0, x1, xstep = W - 1, -1, -1
    y = y0
    while y != y1:
        x = x0
        while x != x1:
            py = y - dy
            px = x - dx
            if py < 0 or py >= H or px < 0 or px >= W:
                for d in range(D):
                    L[y, x, d] = c[y, x, d]
            else:
                _line_step(L, c, y, x, py, px, p1, p2, D)
            x += xstep
        y += ystep


def aggregate_paths_impl(cost, long long p1, long long p2, directions):
    cdef cnp.ndarray[cnp.int64_t, ndim=3] c = np.ascontiguousarray(cost, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=3] L = np.empty_like(c)
    cdef cnp.ndarray[cnp.int64_t, ndim=3] total = np.zeros_like(c)
    cdef long long[:, :, ::1] cv = c
    cdef long long[:, :, ::1] Lv = L
    cdef int dx, dy
    for dx, dy in directions:
        with nogil:
            _aggregate_direction(cv, Lv, p1, p2, dx, dy)
        total += L
    return np.minimum(total, SATURATE).astype(np.uint16)
