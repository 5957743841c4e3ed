# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops for the banded non-standard-form apply.

Band storage is row-aligned: ``data[k, d]`` holds entry ``(k, k + d - w)``.
"""


def band_matvec(const double[:, ::1] data, Py_ssize_t w,
                const double[::1] x, double[::1] out):
    """Accumulate ``out += B @ x`` for a row-aligned band matrix ``B``."""
    cdef Py_ssize_t n = data.shape[0], width = data.shape[1]
    cdef Py_ssize_t k, d, lo, hi, m
    cdef double a0, a1, a2, a3
    cdef const double *row
    cdef const double *xs
    if n == 0:
        return
    with nogil:
        for k in range(n):
            lo = w - k
            if lo < 0:
                lo = 0
            hi = n - k + w
            if hi > width:
                hi = width
            row = &data[k, lo]
            xs = &x[k + lo - w]
            # four partial sums; setup.py allows the compiler to reassociate and vectorize them
            a0 = a1 = a2 = a3 = 0.0
            hi = hi - lo
            m = hi & ~3
            d = 0
            while d < m:
                a0 += row[d] * xs[d]
                a1 += row[d + 1] * xs[d + 1]
                a2 += row[d + 2] * xs[d + 2]
                a3 += row[d + 3] * xs[d + 3]
                d += 4
            while d < hi:
                a0 += row[d] * xs[d]
                d += 1
            out[k] += (a0 + a1) + (a2 + a3)


def haar_split(const double[::1] s, double[::1] coarse, double[::1] detail):
    """One analysis step of the orthonormal Haar cascade."""
    cdef Py_ssize_t n = coarse.shape[0], k
    cdef double r = 0.7071067811865475244
    with nogil:
        for k in range(n):
            coarse[k] = (s[2 * k] + s[2 * k + 1]) * r
            detail[k] = (s[2 * k] - s[2 * k + 1]) * r


def haar_merge(const double[::1] coarse, const double[::1] detail, double[::1] s):
    """One synthesis step; inverse of :func:`haar_split`."""
    cdef Py_ssize_t n = coarse.shape[0], k
    cdef double r = 0.7071067811865475244
    with nogil:
        for k in range(n):
            s[2 * k] = (coarse[k] + detail[k]) * r
            s[2 * k + 1] = (coarse[k] - detail[k]) * r
