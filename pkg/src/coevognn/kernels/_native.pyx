# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled sparse kernels; see _fallback.py for the reference semantics."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def csr_spmm(const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] indices,
             const double[::1] values, const double[:, ::1] dense):
    cdef Py_ssize_t n_rows = indptr.shape[0] - 1
    cdef Py_ssize_t k = dense.shape[1]
    out_arr = np.zeros((n_rows, k), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, e, j, c
    cdef double w
    with nogil:
        for i in range(n_rows):
            for e in range(indptr[i], indptr[i + 1]):
                c = indices[e]
                w = values[e]
                for j in range(k):
                    out[i, j] += w * dense[c, j]
    return out_arr


def csr_spmm_t(const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] indices,
               const double[::1] values, const double[:, ::1] grad, Py_ssize_t n_cols):
    cdef Py_ssize_t n_rows = indptr.shape[0] - 1
    cdef Py_ssize_t k = grad.shape[1]
    out_arr = np.zeros((n_cols, k), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, e, j, c
    cdef double w
    with nogil:
        for i in range(n_rows):
            for e in range(indptr[i], indptr[i + 1]):
                c = indices[e]
                w = values[e]
                for j in range(k):
                    out[c, j] += w * grad[i, j]
    return out_arr


def csr_edge_dot(const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] indices,
                 const double[:, ::1] left, const double[:, ::1] right):
    cdef Py_ssize_t n_rows = indptr.shape[0] - 1
    cdef Py_ssize_t k = left.shape[1]
    out_arr = np.zeros(indices.shape[0], dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, e, j, c
    cdef double acc
    with nogil:
        for i in range(n_rows):
            for e in range(indptr[i], indptr[i + 1]):
                c = indices[e]
                acc = 0.0
                for j in range(k):
                    acc += left[i, j] * right[c, j]
                out[e] = acc
    return out_arr


def csr_contains(const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] indices,
                 const cnp.int64_t[::1] rows, const cnp.int64_t[::1] cols):
    cdef Py_ssize_t m = rows.shape[0]
    out_arr = np.zeros(m, dtype=bool)
    cdef cnp.npy_bool[::1] out = out_arr
    cdef Py_ssize_t k, lo, hi, mid
    cdef cnp.int64_t target
    with nogil:
        for k in range(m):
            lo = indptr[rows[k]]
            hi = indptr[rows[k] + 1]
            target = cols[k]
            while lo < hi:
                mid = (lo + hi) >> 1
                if indices[mid] < target:
                    lo = mid + 1
                else:
                    hi = mid
            out[k] = lo < indptr[rows[k] + 1] and indices[lo] == target
    return out_arr
