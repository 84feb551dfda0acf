# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled LOF scoring kernel.

Same contract as ``_lof_np.pool_lof``: exhaustive pairwise distances,
streamed one row at a time, neighbor sets include distance ties at the
k-th neighbor. The hot loop works on squared distances (order-preserving)
with a four-way unrolled accumulator; square roots are taken only for the
O(n*k) selected values. Neighbor lists are kept in a CSR layout.
"""

from libc.math cimport sqrt

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef inline void _row_sq_distances(const double* pts, Py_ssize_t n, Py_ssize_t m,
                                   Py_ssize_t i, double* row) noexcept nogil:
    cdef Py_ssize_t j, c, m4
    cdef const double* xi = pts + i * m
    cdef const double* xj
    cdef double a0, a1, a2, a3, d0, d1, d2, d3
    m4 = m - (m & 3)
    for j in range(n):
        xj = pts + j * m
        a0 = a1 = a2 = a3 = 0.0
        for c in range(0, m4, 4):
            d0 = xi[c] - xj[c]
            d1 = xi[c + 1] - xj[c + 1]
            d2 = xi[c + 2] - xj[c + 2]
            d3 = xi[c + 3] - xj[c + 3]
            a0 += d0 * d0
            a1 += d1 * d1
            a2 += d2 * d2
            a3 += d3 * d3
        for c in range(m4, m):
            d0 = xi[c] - xj[c]
            a0 += d0 * d0
        row[j] = (a0 + a1) + (a2 + a3)


cdef inline double _kth_smallest(const double* row, Py_ssize_t n, Py_ssize_t skip,
                                 Py_ssize_t k, double* heap) noexcept nogil:
    # Max-buffer of the k smallest values, insertion-maintained;
    # heap[0] ends up as the k-th smallest.
    cdef Py_ssize_t filled = 0
    cdef Py_ssize_t j, pos
    cdef double v
    for j in range(n):
        if j == skip:
            continue
        v = row[j]
        if filled < k:
            pos = filled
            while pos > 0 and heap[pos - 1] < v:
                heap[pos] = heap[pos - 1]
                pos -= 1
            heap[pos] = v
            filled += 1
        elif v < heap[0]:
            pos = 0
            while pos + 1 < k and heap[pos + 1] > v:
                heap[pos] = heap[pos + 1]
                pos += 1
            heap[pos] = v
    return heap[0]


def pool_lof(points, int k, double eps):
    """LOF scores for every row of ``points``; returns (scores, k_dists)."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] pts = \
        np.ascontiguousarray(points, dtype=np.float64)
    cdef Py_ssize_t n = pts.shape[0]
    cdef Py_ssize_t m = pts.shape[1]
    if n < k + 1:
        raise ValueError(f"pool of {n} points cannot support k={k}")
    if k < 1:
        raise ValueError("k must be >= 1")

    cdef const double* base = <const double*> pts.data
    cdef cnp.ndarray row_arr = np.empty(n, dtype=np.float64)
    cdef cnp.ndarray heap_arr = np.empty(k, dtype=np.float64)
    cdef double* row = <double*> (<cnp.ndarray> row_arr).data
    cdef double* heap = <double*> (<cnp.ndarray> heap_arr).data
    cdef cnp.ndarray kd_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] k_dists = kd_arr

    cdef cnp.int64_t[::1] offsets = np.zeros(n + 1, dtype=np.int64)
    cdef Py_ssize_t cap = n * (k + 4)
    cdef cnp.ndarray idx_arr = np.empty(cap, dtype=np.int64)
    cdef cnp.ndarray dist_arr = np.empty(cap, dtype=np.float64)
    cdef cnp.int64_t[::1] nbr_idx = idx_arr
    cdef double[::1] nbr_dist = dist_arr

    cdef Py_ssize_t i, j, pos, count
    cdef double kd_sq
    pos = 0
    for i in range(n):
        _row_sq_distances(base, n, m, i, row)
        kd_sq = _kth_smallest(row, n, i, k, heap)
        k_dists[i] = sqrt(kd_sq)
        # Count first so the CSR buffers can be grown in one step.
        count = 0
        for j in range(n):
            if j != i and row[j] <= kd_sq:
                count += 1
        if pos + count > cap:
            cap = max(2 * cap, pos + count)
            idx_arr = np.resize(idx_arr, cap)
            dist_arr = np.resize(dist_arr, cap)
            nbr_idx = idx_arr
            nbr_dist = dist_arr
        for j in range(n):
            if j != i and row[j] <= kd_sq:
                nbr_idx[pos] = j
                nbr_dist[pos] = sqrt(row[j])
                pos += 1
        offsets[i + 1] = pos

    cdef double[::1] dens = np.empty(n)
    cdef double acc, rd
    cdef Py_ssize_t a, b
    for i in range(n):
        a = offsets[i]
        b = offsets[i + 1]
        acc = 0.0
        for j in range(a, b):
            rd = k_dists[nbr_idx[j]]
            if nbr_dist[j] > rd:
                rd = nbr_dist[j]
            acc += rd
        acc /= b - a
        if acc < eps:
            acc = eps
        dens[i] = 1.0 / acc

    scores = np.empty(n)
    cdef double[::1] sv = scores
    for i in range(n):
        a = offsets[i]
        b = offsets[i + 1]
        acc = 0.0
        for j in range(a, b):
            acc += dens[nbr_idx[j]]
        sv[i] = acc / (b - a) / dens[i]
    return scores, kd_arr
