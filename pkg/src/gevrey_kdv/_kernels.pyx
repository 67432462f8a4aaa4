# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for applying tabulated symbols on the periodic grid.

Both kernels take the symbol table with its frequency axis in FFT order, so
column ``k`` multiplies the plane wave ``exp(2 pi i j k / N)``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, M_PI

cnp.import_array()


cdef double complex[::1] _twiddles(Py_ssize_t n):
    cdef double complex[::1] tw = np.empty(n, dtype=np.complex128)
    cdef Py_ssize_t m
    for m in range(n):
        tw[m] = cos(2.0 * M_PI * m / n) + 1j * sin(2.0 * M_PI * m / n)
    return tw


def symbol_apply(const double complex[:, ::1] p, const double complex[::1] c):
    """Return ``out[j] = sum_k p[j, k] c[k] exp(2 pi i j k / N)``."""
    cdef Py_ssize_t n = p.shape[0]
    cdef Py_ssize_t j, k, idx
    cdef double complex acc
    cdef double complex[::1] tw = _twiddles(n)
    out = np.empty(n, dtype=np.complex128)
    cdef double complex[::1] o = out
    for j in range(n):
        acc = 0
        idx = 0
        for k in range(n):
            acc = acc + p[j, k] * c[k] * tw[idx]
            idx = idx + j
            if idx >= n:
                idx = idx - n
        o[j] = acc
    return out


def reverse_coeffs(const double complex[:, ::1] p, const double complex[::1] u):
    """Return ``coef[k] = (1/N) sum_j p[j, k] u[j] exp(-2 pi i j k / N)``."""
    cdef Py_ssize_t n = p.shape[0]
    cdef Py_ssize_t j, k, idx
    cdef double complex acc, t
    cdef double complex[::1] tw = _twiddles(n)
    out = np.empty(n, dtype=np.complex128)
    cdef double complex[::1] o = out
    for k in range(n):
        acc = 0
        idx = 0
        for j in range(n):
            t = tw[idx]
            acc = acc + p[j, k] * u[j] * (t.real - 1j * t.imag)
            idx = idx + k
            if idx >= n:
                idx = idx - n
        o[k] = acc / n
    return out
