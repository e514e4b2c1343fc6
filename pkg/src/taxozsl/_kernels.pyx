# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled distance / nearest-neighbour kernels (see _kernels_py for the reference)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY

cnp.import_array()


def sq_dists(const double[:, ::1] queries, const double[:, ::1] bank):
    cdef Py_ssize_t nq = queries.shape[0], nb = bank.shape[0], dim = queries.shape[1]
    cdef Py_ssize_t i, j, c
    cdef double acc, diff
    if bank.shape[1] != dim:
        raise ValueError("query and bank widths differ")
    out = np.empty((nq, nb), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(nq):
            for j in range(nb):
                acc = 0.0
                for c in range(dim):
                    diff = queries[i, c] - bank[j, c]
                    acc = acc + diff * diff
                o[i, j] = acc
    return out


def knn_query(const double[:, ::1] queries, const double[:, ::1] bank, const cnp.int64_t[::1] bank_cls,
              Py_ssize_t n_classes, Py_ssize_t k):
    """Per-class nearest distance plus the k nearest rows, ordered by (distance, row)."""
    cdef Py_ssize_t nq = queries.shape[0], nb = bank.shape[0], dim = queries.shape[1]
    cdef Py_ssize_t i, j, c, pos
    cdef double acc, diff, dist
    if bank.shape[1] != dim:
        raise ValueError("query and bank widths differ")
    if k > nb:
        k = nb
    class_min = np.full((nq, n_classes), np.inf)
    nn_idx = np.empty((nq, k), dtype=np.int64)
    nn_dist = np.empty((nq, k), dtype=np.float64)
    cdef double[:, ::1] cm = class_min
    cdef cnp.int64_t[:, ::1] ni = nn_idx
    cdef double[:, ::1] nd = nn_dist
    cdef Py_ssize_t filled
    with nogil:
        for i in range(nq):
            filled = 0
            for j in range(nb):
                acc = 0.0
                for c in range(dim):
                    diff = queries[i, c] - bank[j, c]
                    acc = acc + diff * diff
                dist = sqrt(acc)
                if dist < cm[i, bank_cls[j]]:
                    cm[i, bank_cls[j]] = dist
                # insertion into the sorted k-best list; strict < keeps earlier rows on ties
                if filled < k or dist < nd[i, filled - 1]:
                    if filled < k:
                        pos = filled
                        filled += 1
                    else:
                        pos = k - 1
                    while pos > 0 and dist < nd[i, pos - 1]:
                        nd[i, pos] = nd[i, pos - 1]
                        ni[i, pos] = ni[i, pos - 1]
                        pos -= 1
                    nd[i, pos] = dist
                    ni[i, pos] = j
    return class_min, nn_idx, nn_dist
