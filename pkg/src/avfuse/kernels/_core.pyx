# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled convolution/pooling kernels (see _fallback.py for the contract).

Output channels are accumulated in a small stack buffer so the C
compiler can keep them in registers and vectorize; this caps the
supported channel count at 128, far above the widths used here.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

DEF MAX_CHANNELS = 128


def conv2d_forward(cnp.float64_t[:, :, :, ::1] x,
                   cnp.float64_t[:, :, :, ::1] w,
                   cnp.float64_t[::1] b):
    cdef Py_ssize_t bsz = x.shape[0], h = x.shape[1], wid = x.shape[2], ci = x.shape[3]
    cdef Py_ssize_t kh = w.shape[0], kw = w.shape[1], co = w.shape[3]
    cdef Py_ssize_t ph = kh // 2, pw = kw // 2
    cdef Py_ssize_t n, i, j, dy, dx, ii, jj, c, o
    cdef double xv
    cdef double acc[MAX_CHANNELS]
    if co > MAX_CHANNELS:
        raise ValueError(f"conv2d_forward supports at most {MAX_CHANNELS} output channels")
    y_arr = np.empty((bsz, h, wid, co), dtype=np.float64)
    cdef cnp.float64_t[:, :, :, ::1] y = y_arr

    for n in range(bsz):
        for i in range(h):
            for j in range(wid):
                for o in range(co):
                    acc[o] = b[o]
                for dy in range(kh):
                    ii = i + dy - ph
                    if ii < 0 or ii >= h:
                        continue
                    for dx in range(kw):
                        jj = j + dx - pw
                        if jj < 0 or jj >= wid:
                            continue
                        for c in range(ci):
                            xv = x[n, ii, jj, c]
                            for o in range(co):
                                acc[o] += xv * w[dy, dx, c, o]
                for o in range(co):
                    y[n, i, j, o] = acc[o]
    return y_arr


def conv2d_backward(cnp.float64_t[:, :, :, ::1] x,
                    cnp.float64_t[:, :, :, ::1] w,
                    cnp.float64_t[:, :, :, ::1] gy):
    cdef Py_ssize_t bsz = x.shape[0], h = x.shape[1], wid = x.shape[2], ci = x.shape[3]
    cdef Py_ssize_t kh = w.shape[0], kw = w.shape[1], co = w.shape[3]
    cdef Py_ssize_t ph = kh // 2, pw = kw // 2
    cdef Py_ssize_t n, i, j, dy, dx, ii, jj, c, o
    cdef double s, xv
    cdef double gv[MAX_CHANNELS]
    if co > MAX_CHANNELS:
        raise ValueError(f"conv2d_backward supports at most {MAX_CHANNELS} output channels")

    gx_arr = np.zeros((bsz, h, wid, ci), dtype=np.float64)
    gw_arr = np.zeros((kh, kw, ci, co), dtype=np.float64)
    gb_arr = np.zeros(co, dtype=np.float64)
    cdef cnp.float64_t[:, :, :, ::1] gx = gx_arr
    cdef cnp.float64_t[:, :, :, ::1] gw = gw_arr
    cdef cnp.float64_t[::1] gb = gb_arr

    for n in range(bsz):
        for i in range(h):
            for j in range(wid):
                for o in range(co):
                    gv[o] = gy[n, i, j, o]
                    gb[o] += gv[o]
                for dy in range(kh):
                    ii = i + dy - ph
                    if ii < 0 or ii >= h:
                        continue
                    for dx in range(kw):
                        jj = j + dx - pw
                        if jj < 0 or jj >= wid:
                            continue
                        for c in range(ci):
                            xv = x[n, ii, jj, c]
                            s = 0.0
                            for o in range(co):
                                gw[dy, dx, c, o] += xv * gv[o]
                                s += w[dy, dx, c, o] * gv[o]
                            gx[n, ii, jj, c] += s
    return gx_arr, gw_arr, gb_arr


def avgpool2_forward(cnp.float64_t[:, :, :, ::1] x):
    cdef Py_ssize_t bsz = x.shape[0], h = x.shape[1], wid = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t h2 = h // 2, w2 = wid // 2
    cdef Py_ssize_t n, i, j, k
    y_arr = np.empty((bsz, h2, w2, c), dtype=np.float64)
    cdef cnp.float64_t[:, :, :, ::1] y = y_arr
    for n in range(bsz):
        for i in range(h2):
            for j in range(w2):
                for k in range(c):
                    y[n, i, j, k] = 0.25 * (
                        x[n, 2 * i, 2 * j, k] + x[n, 2 * i, 2 * j + 1, k]
                        + x[n, 2 * i + 1, 2 * j, k] + x[n, 2 * i + 1, 2 * j + 1, k]
                    )
    return y_arr


def avgpool2_backward(x_shape, cnp.float64_t[:, :, :, ::1] gy):
    cdef Py_ssize_t bsz = x_shape[0], h = x_shape[1], wid = x_shape[2], c = x_shape[3]
    cdef Py_ssize_t h2 = h // 2, w2 = wid // 2
    cdef Py_ssize_t n, i, j, k
    cdef double g
    gx_arr = np.zeros((bsz, h, wid, c), dtype=np.float64)
    cdef cnp.float64_t[:, :, :, ::1] gx = gx_arr
    for n in range(bsz):
        for i in range(h2):
            for j in range(w2):
                for k in range(c):
                    g = 0.25 * gy[n, i, j, k]
                    gx[n, 2 * i, 2 * j, k] = g
                    gx[n, 2 * i, 2 * j + 1, k] = g
                    gx[n, 2 * i + 1, 2 * j, k] = g
                    gx[n, 2 * i + 1, 2 * j + 1, k] = g
    return gx_arr


BACKEND_NAME = "cython"
