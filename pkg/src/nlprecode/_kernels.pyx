# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled circular im2col / col2im kernels on channels-last arrays.

``col2im`` is written as a gather and adds the taps of each output element
in (row tap, column tap) order, the same order as the numpy fallback, so
both backends return bit-identical results.
"""
import numpy as np

ctypedef fused real_t:
    float
    double


cdef inline Py_ssize_t _wrap(Py_ssize_t i, Py_ssize_t n) noexcept nogil:
    i = i % n
    if i < 0:
        i += n
    return i


def im2col(real_t[:, :, :, ::1] x, int kh, int kw):
    cdef Py_ssize_t B = x.shape[0], M = x.shape[1], K = x.shape[2], C = x.shape[3]
    cdef Py_ssize_t ph = kh // 2, pw = kw // 2
    dtype = np.float32 if real_t is float else np.float64
    out = np.empty((B, M, K, kh, kw, C), dtype=dtype)
    cdef real_t[:, :, :, :, :, ::1] cols = out
    cdef Py_ssize_t b, m, k, a, e, r, s, c
    with nogil:
        for b in range(B):
            for m in range(M):
                for k in range(K):
                    for a in range(kh):
                        r = _wrap(m + a - ph, M)
                        for e in range(kw):
                            s = _wrap(k + e - pw, K)
                            for c in range(C):
                                cols[b, m, k, a, e, c] = x[b, r, s, c]
    return out


def col2im(real_t[:, :, :, :, :, ::1] cols):
    cdef Py_ssize_t B = cols.shape[0], M = cols.shape[1], K = cols.shape[2]
    cdef Py_ssize_t kh = cols.shape[3], kw = cols.shape[4], C = cols.shape[5]
    cdef Py_ssize_t ph = kh // 2, pw = kw // 2
    dtype = np.float32 if real_t is float else np.float64
    out = np.zeros((B, M, K, C), dtype=dtype)
    cdef real_t[:, :, :, ::1] gx = out
    cdef Py_ssize_t b, r, s, a, e, m, k, c
    with nogil:
        for b in range(B):
            for r in range(M):
                for s in range(K):
                    for a in range(kh):
                        m = _wrap(r - a + ph, M)
                        for e in range(kw):
                            k = _wrap(s - e + pw, K)
                            for c in range(C):
                                gx[b, r, s, c] += cols[b, m, k, a, e, c]
    return out
