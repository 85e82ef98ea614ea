# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled residual/Jacobian assembly for bilinear least squares."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def bilinear_jacobian(const cnp.int64_t[::1] rows, const cnp.int64_t[::1] kidx,
                      const cnp.int64_t[::1] jidx, const double[::1] vals,
                      const double[:, ::1] B, const double[:, ::1] C, Py_ssize_t nrows):
    cdef Py_ssize_t nnz = vals.shape[0]
    cdef Py_ssize_t m = B.shape[0]
    cdef Py_ssize_t p = B.shape[1]
    cdef Py_ssize_t e, l, k, j, q
    cdef double a, dot

    out_r = np.zeros(nrows)
    out_rows = np.empty(nnz * p, dtype=np.int64)
    out_cb = np.empty(nnz * p, dtype=np.int64)
    out_vb = np.empty(nnz * p)
    out_cc = np.empty(nnz * p, dtype=np.int64)
    out_vc = np.empty(nnz * p)
    cdef double[::1] r = out_r
    cdef cnp.int64_t[::1] jr = out_rows
    cdef cnp.int64_t[::1] cb = out_cb
    cdef double[::1] vb = out_vb
    cdef cnp.int64_t[::1] cc = out_cc
    cdef double[::1] vc = out_vc

    with nogil:
        for e in range(nnz):
            a = vals[e]
            k = kidx[e]
            j = jidx[e]
            dot = 0.0
            for l in range(p):
                q = e * p + l
                dot = dot + B[k, l] * C[j, l]
                jr[q] = rows[e]
                cb[q] = k + m * l
                vb[q] = a * C[j, l]
                cc[q] = l + p * j
                vc[q] = a * B[k, l]
            r[rows[e]] += a * dot
    return out_r, out_rows, out_cb, out_vb, out_cc, out_vc
