# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernel core.

Covers the kernels where straight-line C beats allocation-heavy numpy:
pairwise Lk distance fields, the L1 similarity backprop contraction, and
the 8-connected minima search.  Cosine distances are deliberately absent:
they reduce to a BLAS matmul, which the numpy implementation already is.

The dispatch layer validates inputs; loops assume float64 C-contiguous
arrays of matching shape.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, pow, sqrt

cnp.import_array()


def manhattan_distances(double[:, ::1] queries, double[:, ::1] prototypes):
    cdef Py_ssize_t n = queries.shape[0]
    cdef Py_ssize_t c = prototypes.shape[0]
    cdef Py_ssize_t dim = queries.shape[1]
    out_arr = np.empty((n, c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, d
    cdef double acc
    for i in range(n):
        for j in range(c):
            acc = 0.0
            for d in range(dim):
                acc += fabs(queries[i, d] - prototypes[j, d])
            out[i, j] = acc
    return out_arr


def lk_distances(double[:, ::1] queries, double[:, ::1] prototypes, double k):
    if k == 1.0:
        return manhattan_distances(queries, prototypes)
    cdef Py_ssize_t n = queries.shape[0]
    cdef Py_ssize_t c = prototypes.shape[0]
    cdef Py_ssize_t dim = queries.shape[1]
    out_arr = np.empty((n, c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, d
    cdef double acc, diff
    cdef bint euclid = k == 2.0
    for i in range(n):
        for j in range(c):
            acc = 0.0
            if euclid:
                for d in range(dim):
                    diff = queries[i, d] - prototypes[j, d]
                    acc += diff * diff
                out[i, j] = sqrt(acc)
            else:
                for d in range(dim):
                    acc += pow(fabs(queries[i, d] - prototypes[j, d]), k)
                out[i, j] = pow(acc, 1.0 / k)
    return out_arr


def weighted_sign_sum(
    double[:, ::1] queries, double[:, ::1] prototypes, double[:, ::1] weights
):
    cdef Py_ssize_t n = queries.shape[0]
    cdef Py_ssize_t c = prototypes.shape[0]
    cdef Py_ssize_t dim = queries.shape[1]
    out_arr = np.zeros((n, dim), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, d
    cdef double w, diff
    for i in range(n):
        for j in range(c):
            w = weights[i, j]
            if w == 0.0:
                continue
            for d in range(dim):
                diff = queries[i, d] - prototypes[j, d]
                # branchless sign accumulate
                out[i, d] += w * ((diff > 0.0) - (diff < 0.0))
    return out_arr


def local_minima8(double[:, ::1] field, double threshold):
    cdef Py_ssize_t h = field.shape[0]
    cdef Py_ssize_t w = field.shape[1]
    cdef Py_ssize_t y, x, dy, dx, ny, nx, count
    cdef double value, nb
    cdef bint ok
    buf_arr = np.empty((h * w, 2), dtype=np.int64)
    cdef long long[:, ::1] buf = buf_arr
    count = 0
    for y in range(h):
        for x in range(w):
            value = field[y, x]
            if not value < threshold:
                continue
            ok = True
            for dy in range(-1, 2):
                if not ok:
                    break
                for dx in range(-1, 2):
                    if dy == 0 and dx == 0:
                        continue
                    ny = y + dy
                    nx = x + dx
                    if ny < 0 or ny >= h or nx < 0 or nx >= w:
                        continue
                    nb = field[ny, nx]
                    if value > nb:
                        ok = False
                        break
                    if value == nb and not (dy > 0 or (dy == 0 and dx > 0)):
                        # tied against an earlier-raster neighbor: drop
                        ok = False
                        break
            if ok:
                buf[count, 0] = y
                buf[count, 1] = x
                count += 1
    return buf_arr[:count].copy()
