"""Numpy implementation of the rounding kernels.

This is the fallback backend; the compiled extension implements the same
five functions with identical semantics.  Bitwise agreement between the
two rests on three facts: ``frexp``/``ldexp`` are exact, ``rint`` rounds
half to even under the default floating-point environment, and every
fp64 intermediate is formed in the same order in both backends.

All kernels take the format unpacked as ``(emin, fbits, xmax,
subnormals)`` so the hot loops never touch Python attribute lookups.
"""

from __future__ import annotations

import math

import numpy as np


def chop_scalar(x: float, emin: int, fbits: int, xmax: float,
                subnormals: bool) -> float:
    """Round one fp64 value to the simulated format."""
    if x == 0.0 or not math.isfinite(x):
        return x
    ax = abs(x)
    _, e = math.frexp(ax)  # ax = m * 2**e with m in [0.5, 1)
    ew = e - 1             # ax in [2**ew, 2**(ew+1))
    if ew >= emin:
        ulp = ew - fbits
    elif subnormals:
        ulp = emin - fbits
    else:
        ulp = emin         # flush-to-zero region rounds onto {0, 2**emin}
    scaled = math.ldexp(ax, -ulp)
    r = float(round(scaled))  # python round() breaks ties to even
    try:
        res = math.ldexp(r, ulp)
    except OverflowError:  # rounded past the fp64 range, so past xmax too
        return math.copysign(math.inf, x)
    if res > xmax:
        res = math.inf
    return math.copysign(res, x)


def chop_array(arr, emin: int, fbits: int, xmax: float,
               subnormals: bool) -> np.ndarray:
    """Elementwise chop; zeros, infinities and NaNs pass through."""
    a = np.asarray(arr, dtype=float)
    special = ~np.isfinite(a) | (a == 0.0)
    safe = np.where(special, 1.0, a)
    _, e = np.frexp(np.abs(safe))
    ew = e.astype(np.int64) - 1
    if subnormals:
        ulp = np.maximum(ew, emin) - fbits
    else:
        ulp = np.where(ew >= emin, ew - fbits, emin)
    with np.errstate(over="ignore"):  # values rounding past fp64 become inf
        scaled = np.ldexp(np.abs(safe), -ulp)
        r = np.rint(scaled)
        res = np.ldexp(r, ulp)
    res = np.where(res > xmax, np.inf, res)
    out = np.copysign(res, a)
    return np.where(special, a, out)


def sum_chopped(vec, emin: int, fbits: int, xmax: float,
                subnormals: bool) -> float:
    """Pairwise fold with every partial sum rounded.

    Level by level, neighbours (0,1), (2,3), ... are added and rounded;
    an odd leftover element is carried to the next level unchanged.  The
    compiled backend reproduces exactly this association order.
    """
    w = np.asarray(vec, dtype=float).ravel()
    if w.size == 0:
        return 0.0
    while w.size > 1:
        n2 = (w.size // 2) * 2
        s = chop_array(w[0:n2:2] + w[1:n2:2], emin, fbits, xmax, subnormals)
        if w.size % 2:
            s = np.append(s, w[-1])
        w = s
    return float(w[0])


def dot_chopped(x, y, emin: int, fbits: int, xmax: float,
                subnormals: bool) -> float:
    """Chopped products followed by the pairwise chopped fold."""
    t = chop_array(np.asarray(x, float) * np.asarray(y, float),
                   emin, fbits, xmax, subnormals)
    return sum_chopped(t, emin, fbits, xmax, subnormals)


def matvec_chopped(A, x, emin: int, fbits: int, xmax: float,
                   subnormals: bool) -> np.ndarray:
    """Column-sweep matrix-vector product, one rounding per operation.

    Each output element accumulates ``chop(acc + chop(A[i, j] * x[j]))``
    over columns j in ascending order.
    """
    A = np.asarray(A, float)
    x = np.asarray(x, float)
    m, n = A.shape
    acc = np.zeros(m)
    for j in range(n):
        t = chop_array(A[:, j] * x[j], emin, fbits, xmax, subnormals)
        acc = chop_array(acc + t, emin, fbits, xmax, subnormals)
    return acc
