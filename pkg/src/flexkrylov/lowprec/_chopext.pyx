# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled rounding kernels.

Bitwise-identical counterpart of ``_chopfallback``: same operation
order, same tie-to-even rounding.  Correctness depends on ``rint``
running under the default FE_TONEAREST mode, which is why the build
must not enable -ffast-math.
"""

from libc.math cimport INFINITY, copysign, fabs, frexp, ldexp, rint

import numpy as np


cdef inline double _chop1(double x, int emin, int fbits, double xmax,
                          bint subnormals) noexcept nogil:
    cdef int e, ulp
    cdef double ax, scaled, res
    if x == 0.0 or x != x or x == INFINITY or x == -INFINITY:
        return x
    ax = fabs(x)
    frexp(ax, &e)
    e -= 1              # ax in [2**e, 2**(e+1))
    if e >= emin:
        ulp = e - fbits
    elif subnormals:
        ulp = emin - fbits
    else:
        ulp = emin
    scaled = ldexp(ax, -ulp)
    res = ldexp(rint(scaled), ulp)
    if res > xmax:
        res = INFINITY
    return copysign(res, x)


def chop_scalar(double x, int emin, int fbits, double xmax, bint subnormals):
    return _chop1(x, emin, fbits, xmax, subnormals)


def chop_array(arr, int emin, int fbits, double xmax, bint subnormals):
    a = np.array(arr, dtype=np.float64, order="C", copy=True)
    cdef double[::1] v = a.reshape(-1)
    cdef Py_ssize_t i, n = v.shape[0]
    with nogil:
        for i in range(n):
            v[i] = _chop1(v[i], emin, fbits, xmax, subnormals)
    return a


def sum_chopped(vec, int emin, int fbits, double xmax, bint subnormals):
    a = np.array(vec, dtype=np.float64, copy=True).ravel()
    cdef double[::1] v = a
    cdef Py_ssize_t n = v.shape[0], half, i
    if n == 0:
        return 0.0
    with nogil:
        while n > 1:
            half = n // 2
            for i in range(half):
                v[i] = _chop1(v[2 * i] + v[2 * i + 1],
                              emin, fbits, xmax, subnormals)
            if n % 2:
                v[half] = v[n - 1]
                n = half + 1
            else:
                n = half
    return float(v[0])


def dot_chopped(x, y, int emin, int fbits, double xmax, bint subnormals):
    xa = np.ascontiguousarray(x, dtype=np.float64)
    ya = np.ascontiguousarray(y, dtype=np.float64)
    t = np.empty_like(xa)
    cdef double[::1] xv = xa, yv = ya, tv = t
    cdef Py_ssize_t i, n = xv.shape[0]
    if yv.shape[0] != n:
        raise ValueError("length mismatch")
    with nogil:
        for i in range(n):
            tv[i] = _chop1(xv[i] * yv[i], emin, fbits, xmax, subnormals)
    return sum_chopped(t, emin, fbits, xmax, subnormals)


def matvec_chopped(A, x, int emin, int fbits, double xmax, bint subnormals):
    Aa = np.ascontiguousarray(A, dtype=np.float64)
    xa = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] Am = Aa
    cdef double[::1] xv = xa
    cdef Py_ssize_t i, j, m = Am.shape[0], n = Am.shape[1]
    if xv.shape[0] != n:
        raise ValueError("dimension mismatch")
    out = np.zeros(m, dtype=np.float64)
    cdef double[::1] ov = out
    cdef double acc
    with nogil:
        for i in range(m):
            acc = 0.0
            for j in range(n):
                acc = _chop1(acc + _chop1(Am[i, j] * xv[j],
                                          emin, fbits, xmax, subnormals),
                             emin, fbits, xmax, subnormals)
            ov[i] = acc
    return out
