# Compiled loops for the convolution lowering and the Haar transform.
# Mirrors sdtl._pykernels exactly; both accept float32 and float64.
cimport cython
import numpy as np

ctypedef fused real:
    float
    double


def im2col(const real[:, :, :, ::1] xp, Py_ssize_t k, Py_ssize_t stride):
    cdef Py_ssize_t B = xp.shape[0], C = xp.shape[1]
    cdef Py_ssize_t Hp = xp.shape[2], Wp = xp.shape[3]
    cdef Py_ssize_t Ho = (Hp - k) // stride + 1
    cdef Py_ssize_t Wo = (Wp - k) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out = np.empty((B, C * k * k, Ho * Wo), dtype=dtype)
    cdef real[:, :, ::1] cols = out
    cdef Py_ssize_t b, c, i, j, oy, ox, row, y0
    with nogil:
        for b in range(B):
            for c in range(C):
                for i in range(k):
                    for j in range(k):
                        row = (c * k + i) * k + j
                        for oy in range(Ho):
                            y0 = oy * stride + i
                            for ox in range(Wo):
                                cols[b, row, oy * Wo + ox] = xp[b, c, y0, ox * stride + j]
    return out


def col2im(const real[:, :, ::1] cols, Py_ssize_t C, Py_ssize_t Hp, Py_ssize_t Wp,
           Py_ssize_t k, Py_ssize_t stride):
    cdef Py_ssize_t B = cols.shape[0]
    cdef Py_ssize_t Ho = (Hp - k) // stride + 1
    cdef Py_ssize_t Wo = (Wp - k) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((B, C, Hp, Wp), dtype=dtype)
    cdef real[:, :, :, ::1] xp = out
    cdef Py_ssize_t b, c, i, j, oy, ox, row, y0
    with nogil:
        for b in range(B):
            for c in range(C):
                for i in range(k):
                    for j in range(k):
                        row = (c * k + i) * k + j
                        for oy in range(Ho):
                            y0 = oy * stride + i
                            for ox in range(Wo):
                                xp[b, c, y0, ox * stride + j] += cols[b, row, oy * Wo + ox]
    return out


def haar_analysis(const real[:, :, ::1] x):
    cdef Py_ssize_t N = x.shape[0], h = x.shape[1] // 2, w = x.shape[2] // 2
    dtype = np.float32 if real is float else np.float64
    out = np.empty((4, N, h, w), dtype=dtype)
    cdef real[:, :, :, ::1] s = out
    cdef Py_ssize_t n, y, xx
    cdef real a, b, c, d
    with nogil:
        for n in range(N):
            for y in range(h):
                for xx in range(w):
                    a = x[n, 2 * y, 2 * xx]
                    b = x[n, 2 * y, 2 * xx + 1]
                    c = x[n, 2 * y + 1, 2 * xx]
                    d = x[n, 2 * y + 1, 2 * xx + 1]
                    s[0, n, y, xx] = (a + b + c + d) * 0.5
                    s[1, n, y, xx] = (a - b + c - d) * 0.5
                    s[2, n, y, xx] = (a + b - c - d) * 0.5
                    s[3, n, y, xx] = (a - b - c + d) * 0.5
    return out


def haar_synthesis(const real[:, :, :, ::1] s):
    cdef Py_ssize_t N = s.shape[1], h = s.shape[2], w = s.shape[3]
    dtype = np.float32 if real is float else np.float64
    out = np.empty((N, 2 * h, 2 * w), dtype=dtype)
    cdef real[:, :, ::1] x = out
    cdef Py_ssize_t n, y, xx
    cdef real ll, hl, lh, hh
    with nogil:
        for n in range(N):
            for y in range(h):
                for xx in range(w):
                    ll = s[0, n, y, xx]
                    hl = s[1, n, y, xx]
                    lh = s[2, n, y, xx]
                    hh = s[3, n, y, xx]
                    x[n, 2 * y, 2 * xx] = (ll + hl + lh + hh) * 0.5
                    x[n, 2 * y, 2 * xx + 1] = (ll - hl + lh - hh) * 0.5
                    x[n, 2 * y + 1, 2 * xx] = (ll + hl - lh - hh) * 0.5
                    x[n, 2 * y + 1, 2 * xx + 1] = (ll - hl - lh + hh) * 0.5
    return out
