# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Gram-sum kernel.

Streams row blocks of the cross Gram matrix through a single scratch buffer:
one ``dgemm`` per block for the inner products, then a vectorized
clamp/exp/row-sum pass (``_expsum.c``) and a compensated sum over rows.  The GIL is released for the whole computation so
pairs can run concurrently on a thread pool.
"""

import numpy as np

from scipy.linalg.cython_blas cimport dgemm


cdef extern from "_expsum.h" nogil:
    void wsimmd_exp_row_sums(const double *g, const double *norm_a, const double *norm_b,
                             size_t rows, size_t cols, double scale, double *out)


cdef void _row_norms(const double[:, ::1] x, double[::1] out) noexcept nogil:
    cdef Py_ssize_t i, k
    cdef double s, v
    for i in range(x.shape[0]):
        s = 0.0
        for k in range(x.shape[1]):
            v = x[i, k]
            s += v * v
        out[i] = s


def gram_sum(const double[:, ::1] a, const double[:, ::1] b, double scale,
             Py_ssize_t block=256):
    """Return sum_ij exp(-scale * ||a_i - b_j||^2) without forming the full Gram."""
    cdef Py_ssize_t na = a.shape[0], nb = b.shape[0], d = a.shape[1]
    if b.shape[1] != d:
        raise ValueError(f"dimension mismatch: {d} != {b.shape[1]}")
    if block < 1:
        raise ValueError("block must be positive")
    if na == 0 or nb == 0:
        return 0.0
    if block > na:
        block = na

    cdef double[::1] norm_a = np.empty(na, dtype=np.float64)
    cdef double[::1] norm_b = np.empty(nb, dtype=np.float64)
    cdef double[:, ::1] buf = np.empty((block, nb), dtype=np.float64)
    cdef double[::1] row_sums = np.empty(block, dtype=np.float64)

    cdef char transa = b'T'
    cdef char transb = b'N'
    cdef int m_, n_, k_ = <int>d, ld = <int>d, ldc = <int>nb
    cdef double one = 1.0, zero = 0.0
    cdef Py_ssize_t i0, rows, i, j
    cdef double row
    # Kahan-compensated accumulation across rows
    cdef double total = 0.0, comp = 0.0, y, t

    with nogil:
        _row_norms(a, norm_a)
        _row_norms(b, norm_b)
        i0 = 0
        while i0 < na:
            rows = block if i0 + block <= na else na - i0
            m_ = <int>nb
            n_ = <int>rows
            if d > 0:
                # row-major buf[rows, nb] = a[i0:i0+rows] @ b.T
                dgemm(&transa, &transb, &m_, &n_, &k_, &one,
                      <double*>&b[0, 0], &ld, <double*>&a[i0, 0], &ld,
                      &zero, &buf[0, 0], &ldc)
            else:
                for i in range(rows):
                    for j in range(nb):
                        buf[i, j] = 0.0
            wsimmd_exp_row_sums(&buf[0, 0], &norm_a[i0], &norm_b[0], <size_t>rows,
                                <size_t>nb, scale, &row_sums[0])
            for i in range(rows):
                row = row_sums[i]
                y = row - comp
                t = total + y
                comp = (t - total) - y
                total = t
            i0 += rows
    return total
