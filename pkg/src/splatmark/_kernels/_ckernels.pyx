# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in _pykernels (same semantics)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp
from libc.stdint cimport uint32_t, uint64_t, int64_t

cnp.import_array()

cdef double TRANSMITTANCE_EPS = 1e-4
cdef double ALPHA_MAX = 0.99


def fisher_yates(const uint32_t[::1] words, Py_ssize_t T):
    cdef int64_t[::1] perm
    cdef Py_ssize_t i, j, pos = 0, nw = words.shape[0]
    cdef uint64_t bound, limit, two32 = (<uint64_t>1) << 32
    cdef uint32_t w
    cdef int64_t tmp
    out = np.arange(T, dtype=np.int64)
    perm = out
    i = T - 1
    while i > 0:
        bound = <uint64_t>(i + 1)
        limit = two32 - (two32 % bound)
        while True:
            if pos >= nw:
                return np.arange(T, dtype=np.int64), -1
            w = words[pos]
            pos += 1
            if <uint64_t>w < limit:
                break
        j = <Py_ssize_t>(<uint64_t>w % bound)
        tmp = perm[i]
        perm[i] = perm[j]
        perm[j] = tmp
        i -= 1
    return out, pos


def composite(const double[:, ::1] means2d, const double[:, ::1] conics,
              const double[::1] opacities, const double[:, ::1] colors,
              const int64_t[:, ::1] bboxes, Py_ssize_t width, Py_ssize_t height,
              background):
    rgb_a = np.zeros((height, width, 3))
    trans_a = np.ones((height, width))
    wsum_a = np.zeros((height, width))
    cdef double[:, :, ::1] rgb = rgb_a
    cdef double[:, ::1] trans = trans_a
    cdef double[:, ::1] wsum = wsum_a
    cdef double[::1] bg = np.ascontiguousarray(background, dtype=np.float64)
    cdef Py_ssize_t k, x, y, x0, x1, y0, y1, n = means2d.shape[0]
    cdef double a, b, c, mx, my, dx, dy, power, alpha, t, w, op, cr, cg, cb
    with nogil:
        for k in range(n):
            x0 = bboxes[k, 0]
            x1 = bboxes[k, 1]
            y0 = bboxes[k, 2]
            y1 = bboxes[k, 3]
            if x0 >= x1 or y0 >= y1:
                continue
            a = conics[k, 0]
            b = conics[k, 1]
            c = conics[k, 2]
            mx = means2d[k, 0]
            my = means2d[k, 1]
            op = opacities[k]
            cr = colors[k, 0]
            cg = colors[k, 1]
            cb = colors[k, 2]
            for y in range(y0, y1):
                dy = <double>y - my
                for x in range(x0, x1):
                    t = trans[y, x]
                    if t < TRANSMITTANCE_EPS:
                        continue
                    dx = <double>x - mx
                    power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
                    if power > 0.0:
                        continue
                    alpha = op * exp(power)
                    if alpha > ALPHA_MAX:
                        alpha = ALPHA_MAX
                    w = alpha * t
                    rgb[y, x, 0] += w * cr
                    rgb[y, x, 1] += w * cg
                    rgb[y, x, 2] += w * cb
                    wsum[y, x] += w
                    trans[y, x] = t * (1.0 - alpha)
        for y in range(height):
            for x in range(width):
                t = trans[y, x]
                rgb[y, x, 0] += t * bg[0]
                rgb[y, x, 1] += t * bg[1]
                rgb[y, x, 2] += t * bg[2]
    return rgb_a, trans_a, wsum_a


def greedy_assign(const int64_t[::1] orig_idx, const int64_t[::1] susp_idx,
                  Py_ssize_t n_orig, Py_ssize_t n_susp):
    match_a = np.full(n_orig, -1, dtype=np.int64)
    taken_a = np.zeros(n_susp, dtype=np.uint8)
    cdef int64_t[::1] match = match_a
    cdef unsigned char[::1] taken = taken_a
    cdef Py_ssize_t p, o, s, npairs = orig_idx.shape[0]
    with nogil:
        for p in range(npairs):
            o = orig_idx[p]
            s = susp_idx[p]
            if match[o] < 0 and taken[s] == 0:
                match[o] = s
                taken[s] = 1
    return match_a
