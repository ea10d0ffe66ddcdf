"""Dense kernels and operator plumbing shared by every solver.

The factorization routines here (partial-pivot LU, Householder least
squares, one-sided Jacobi SVD and the SVD-truncation pseudoinverse) are
written in this repository on top of plain numpy arrays instead of
calling LAPACK-backed routines.  Projected problems never exceed a few
hundred rows, so speed is not the concern; what matters is that every
scalar operation can be routed through a rounding context for the
simulated low-precision runs, and that the test suite can compare
against ``numpy.linalg`` as a genuinely independent reference.

Counter policy: :func:`dot` and :func:`norm2` record an algorithmic
inner product with :mod:`flexkrylov.instrument`, as do operator
applications.  Reductions inside the small projected-space kernels are
not recorded; the audited claim is about full-length vectors in the
basis construction, where the flexible processes use none at all.
"""

from __future__ import annotations

import math
import warnings

import numpy as np

from . import instrument

__all__ = [
    "RankDeficiencyWarning",
    "LinearOperator",
    "MatrixOperator",
    "dot",
    "norm2",
    "norm_inf",
    "lu_partial_pivot",
    "forward_substitution",
    "back_substitution",
    "solve_dense",
    "qr_least_squares",
    "householder_qr",
    "orthonormal_columns",
    "svd_small",
    "svd_full",
    "pinv_small",
]

_EPS = np.finfo(float).eps


class RankDeficiencyWarning(UserWarning):
    """Issued when a factorization meets numerical rank deficiency."""


# ---------------------------------------------------------------------------
# counted reductions and operators


def dot(x, y) -> float:
    """Inner product, recorded by the instrumentation counters."""
    instrument.record_dot()
    return float(np.dot(np.asarray(x, float), np.asarray(y, float)))


def norm2(x) -> float:
    """Euclidean norm; counts as one recorded inner product."""
    instrument.record_dot()
    v = np.asarray(x, float)
    return float(math.sqrt(np.dot(v, v)))


def norm_inf(x) -> float:
    """Max-magnitude norm.  Comparison based, never counted."""
    v = np.asarray(x, float)
    if v.size == 0:
        return 0.0
    return float(np.max(np.abs(v)))


class LinearOperator:
    """Minimal operator interface: shape plus (transpose) application.

    Subclasses implement ``_apply`` and optionally ``_apply_transpose``
    and the rounded variants.  ``counted=False`` exempts wrapper
    operators whose inner operator already records its own
    applications.  Operators must be safe for concurrent read-only
    application; all state mutated during ``apply`` lives in the
    thread-local counters.
    """

    counted = True

    def __init__(self, shape):
        self.shape = (int(shape[0]), int(shape[1]))

    def apply(self, x, ctx=None):
        if self.counted:
            instrument.record_matvec()
        if ctx is None or not getattr(ctx, "rounds", False):
            return self._apply(np.asarray(x, float))
        return self._apply_rounded(np.asarray(x, float), ctx)

    def apply_transpose(self, x, ctx=None):
        if self.counted:
            instrument.record_matvec(transpose=True)
        if ctx is None or not getattr(ctx, "rounds", False):
            return self._apply_transpose(np.asarray(x, float))
        return self._apply_transpose_rounded(np.asarray(x, float), ctx)

    def _apply(self, x):
        raise NotImplementedError

    def _apply_transpose(self, x):
        raise NotImplementedError(f"{type(self).__name__} has no transpose")

    def _apply_rounded(self, x, ctx):
        raise NotImplementedError(
            f"{type(self).__name__} does not support rounded application"
        )

    def _apply_transpose_rounded(self, x, ctx):
        raise NotImplementedError(
            f"{type(self).__name__} does not support rounded application"
        )

    def to_dense(self) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no dense form")


class MatrixOperator(LinearOperator):
    """Dense matrix wrapped as an operator."""

    def __init__(self, matrix):
        self.matrix = np.ascontiguousarray(matrix, dtype=float)
        super().__init__(self.matrix.shape)

    def _apply(self, x):
        return self.matrix @ x

    def _apply_transpose(self, x):
        return self.matrix.T @ x

    def _apply_rounded(self, x, ctx):
        return ctx.matvec(self.matrix, x)

    def _apply_transpose_rounded(self, x, ctx):
        # Contiguity of the transpose matters only for the compiled kernel.
        return ctx.matvec(np.ascontiguousarray(self.matrix.T), x)

    def to_dense(self) -> np.ndarray:
        return self.matrix


# ---------------------------------------------------------------------------
# LU with partial pivoting


def lu_partial_pivot(M):
    """Row-pivoted LU of a dense matrix with at least as many rows as columns.

    Returns ``(perm, L, Ufac)`` with ``M[perm] == L @ Ufac`` up to roundoff,
    ``L`` unit lower trapezoidal (rows x cols) and ``Ufac`` square upper
    triangular.  A pivot below ``1e-14 * max|M|`` marks numerical rank
    deficiency: the column is left uneliminated and a
    :class:`RankDeficiencyWarning` is issued.
    """
    A = np.array(M, dtype=float)
    if A.ndim != 2:
        raise ValueError("lu_partial_pivot expects a matrix")
    r, c = A.shape
    if r < c:
        raise ValueError("lu_partial_pivot requires rows >= columns")
    perm = np.arange(r)
    tol = 1e-14 * norm_inf(A)
    deficient = False
    for k in range(c):
        i = k + int(np.argmax(np.abs(A[k:, k])))
        if i != k:
            A[[k, i]] = A[[i, k]]
            perm[[k, i]] = perm[[i, k]]
        piv = A[k, k]
        if abs(piv) <= tol:
            deficient = True
            A[k + 1 :, k] = 0.0
            continue
        A[k + 1 :, k] /= piv
        if k + 1 < c:
            A[k + 1 :, k + 1 :] -= np.outer(A[k + 1 :, k], A[k, k + 1 :])
    if deficient:
        warnings.warn("pivot below tolerance, matrix numerically rank deficient",
                      RankDeficiencyWarning, stacklevel=2)
    L = np.tril(A, -1)[:, :c]
    np.fill_diagonal(L, 1.0)
    Ufac = np.triu(A[:c, :])
    return perm, L, Ufac


def forward_substitution(L, b, unit_diagonal=True):
    """Solve L y = b for lower triangular L (row sweep)."""
    L = np.asarray(L, float)
    y = np.array(b, dtype=float)
    n = L.shape[0]
    for i in range(n):
        if i:
            y[i] -= L[i, :i] @ y[:i]
        if not unit_diagonal:
            y[i] /= L[i, i]
    return y


def back_substitution(U, b):
    """Solve U y = b for upper triangular U."""
    U = np.asarray(U, float)
    y = np.array(b, dtype=float)
    n = U.shape[0]
    for i in range(n - 1, -1, -1):
        if i + 1 < n:
            y[i] -= U[i, i + 1 :] @ y[i + 1 :]
        y[i] /= U[i, i]
    return y


def solve_dense(A, b):
    """Solve a square dense system through the in-repo pivoted LU."""
    A = np.asarray(A, float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("solve_dense expects a square matrix")
    perm, L, U = lu_partial_pivot(A)
    b = np.asarray(b, float)
    if b.ndim == 1:
        return back_substitution(U, forward_substitution(L, b[perm]))
    cols = [back_substitution(U, forward_substitution(L, b[perm, j]))
            for j in range(b.shape[1])]
    return np.column_stack(cols)


# ---------------------------------------------------------------------------
# Householder QR and least squares


def _qr_reduce(A, pivot_columns=False):
    """In-place Householder reduction.

    Returns ``(vs, colperm)`` where ``vs`` is the reflector list
    [(k, v, vtv), ...] in application order.  ``A`` is overwritten with
    the reduced matrix (upper triangle = R).
    """
    r, c = A.shape
    colperm = np.arange(c)
    vs = []
    for k in range(c):
        if pivot_columns:
            sub = A[k:, k:]
            j = k + int(np.argmax(np.sum(sub * sub, axis=0)))
            if j != k:
                A[:, [k, j]] = A[:, [j, k]]
                colperm[[k, j]] = colperm[[j, k]]
        if k >= r - 1:
            continue
        x = A[k:, k]
        normx = math.sqrt(float(np.dot(x, x)))
        if normx == 0.0:
            continue
        alpha = -normx if x[0] >= 0 else normx
        v = x.copy()
        v[0] -= alpha
        vtv = float(np.dot(v, v))
        if vtv == 0.0:
            continue
        w = (2.0 / vtv) * (v @ A[k:, k:])
        A[k:, k:] -= np.outer(v, w)
        A[k, k] = alpha
        A[k + 1 :, k] = 0.0
        vs.append((k, v, vtv))
    return vs, colperm


def _apply_reflectors(vs, b):
    y = np.array(b, dtype=float)
    for k, v, vtv in vs:
        coef = (2.0 / vtv) * float(np.dot(v, y[k:]))
        y[k:] -= coef * v
    return y


def householder_qr(M, pivot_columns=False):
    """Thin QR by Householder reflections.

    Returns ``(Q, R, colperm)`` with ``M[:, colperm] == Q @ R`` up to
    roundoff, ``Q`` having orthonormal columns (rows x cols) and ``R``
    upper triangular.  ``pivot_columns=True`` adds a greedy max-norm
    column pivot, making the factorization rank revealing.
    """
    A = np.array(M, dtype=float)
    r, c = A.shape
    if r < c:
        raise ValueError("householder_qr expects rows >= columns")
    vs, colperm = _qr_reduce(A, pivot_columns)
    R = np.triu(A[:c, :])
    Q = np.eye(r, c)
    for k, v, vtv in reversed(vs):
        w = (2.0 / vtv) * (v @ Q[k:, :])
        Q[k:, :] -= np.outer(v, w)
    return Q, R, colperm


def orthonormal_columns(M, tol=None):
    """Orthonormal basis for the column span, via column-pivoted QR."""
    A = np.asarray(M, float)
    if A.ndim == 1:
        A = A[:, None]
    if A.shape[1] == 0 or A.shape[0] == 0:
        return np.zeros((A.shape[0], 0))
    Q, R, _ = householder_qr(A, pivot_columns=True)
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0.0:
        return np.zeros((A.shape[0], 0))
    if tol is None:
        tol = max(A.shape) * _EPS * d[0]
    rank = int(np.sum(d > tol))
    return Q[:, :rank]


def qr_least_squares(M, rhs, ctx=None):
    """Least-squares solution of ``min_y || M y - rhs ||``.

    Householder based, no column pivoting.  On numerical rank deficiency
    the minimum-norm solution is returned instead (SVD route) and a
    :class:`RankDeficiencyWarning` is issued.  With a rounding context
    the whole elimination runs through the context's scalar semantics;
    that path performs no rank repair, consistent with hardware that
    would not either.
    """
    if ctx is not None and getattr(ctx, "rounds", False):
        return _qr_least_squares_rounded(M, rhs, ctx)
    A = np.array(M, dtype=float)
    b = np.asarray(rhs, float)
    if A.ndim != 2:
        raise ValueError("qr_least_squares expects a matrix")
    r, c = A.shape
    if b.shape[0] != r:
        raise ValueError("right-hand side length does not match")
    if c == 0:
        return np.zeros(0)
    if r < c:
        warnings.warn("underdetermined projected system, "
                      "returning minimum-norm solution",
                      RankDeficiencyWarning, stacklevel=2)
        return _minimum_norm_solve(A, b)
    vs, _ = _qr_reduce(A, pivot_columns=False)
    d = np.abs(np.diag(A[:c, :c]))
    dmax = float(np.max(d)) if d.size else 0.0
    tol = max(r, c) * _EPS * dmax
    if dmax == 0.0 or np.any(d <= tol):
        warnings.warn("projected matrix numerically rank deficient, "
                      "returning minimum-norm solution",
                      RankDeficiencyWarning, stacklevel=2)
        return _minimum_norm_solve(np.asarray(M, float), b)
    qtb = _apply_reflectors(vs, b)
    return back_substitution(np.triu(A[:c, :]), qtb[:c])


def _minimum_norm_solve(A, b):
    U, s, V = svd_full(A)
    tol = max(A.shape) * _EPS * (s[0] if s.size else 0.0)
    y = np.zeros(A.shape[1])
    for j in range(s.size):
        if s[j] > tol:
            y += (float(np.dot(U[:, j], b)) / s[j]) * V[:, j]
    return y


def _qr_least_squares_rounded(M, rhs, ctx):
    A = ctx.to_format(np.array(M, dtype=float))
    b = ctx.to_format(np.array(rhs, dtype=float))
    r, c = A.shape
    for k in range(min(c, r - 1)):
        x = A[k:, k].copy()
        sigma = ctx.dot(x, x)
        normx = ctx.sqrt(sigma)
        if normx == 0.0 or not np.isfinite(normx):
            continue
        alpha = -normx if x[0] >= 0 else normx
        v = x
        v[0] = ctx.sub(v[0], alpha)
        vtv = ctx.dot(v, v)
        if vtv == 0.0 or not np.isfinite(vtv):
            continue
        for j in range(k, c):
            t = ctx.dot(v, A[k:, j])
            coef = ctx.div(ctx.mul(2.0, t), vtv)
            A[k:, j] = ctx.sub(A[k:, j], ctx.mul(coef, v))
        t = ctx.dot(v, b[k:])
        coef = ctx.div(ctx.mul(2.0, t), vtv)
        b[k:] = ctx.sub(b[k:], ctx.mul(coef, v))
    y = np.zeros(c)
    for i in range(c - 1, -1, -1):
        acc = b[i]
        if i + 1 < c:
            acc = ctx.sub(acc, ctx.dot(A[i, i + 1 :], y[i + 1 :]))
        y[i] = ctx.div(acc, A[i, i])
    return y


# ---------------------------------------------------------------------------
# one-sided Jacobi SVD


def svd_full(M):
    """Full SVD of a small dense matrix by one-sided Jacobi rotations.

    Returns ``(U, s, V)`` with ``M ~ U @ diag(s) @ V.T`` and singular
    values sorted in decreasing order.  Columns of ``U`` matching a zero
    singular value are left as zero vectors.  Raises ``RuntimeError`` if
    the sweep cap (100 times the larger dimension) is exceeded.
    """
    M = np.asarray(M, float)
    if M.ndim != 2:
        raise ValueError("svd_full expects a matrix")
    r, c = M.shape
    if r < c:
        U, s, V = svd_full(M.T)
        return V, s, U
    A = np.array(M)
    V = np.eye(c)
    if c > 1:
        cap = 100 * max(r, c)
        tol = 1e-15
        converged = False
        for _ in range(cap):
            rotated = False
            for p in range(c - 1):
                for q in range(p + 1, c):
                    apq = float(np.dot(A[:, p], A[:, q]))
                    if apq == 0.0:
                        continue
                    app = float(np.dot(A[:, p], A[:, p]))
                    aqq = float(np.dot(A[:, q], A[:, q]))
                    if abs(apq) <= tol * math.sqrt(app * aqq):
                        continue
                    rotated = True
                    zeta = (aqq - app) / (2.0 * apq)
                    t = math.copysign(1.0, zeta) / (
                        abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                    cs = 1.0 / math.sqrt(1.0 + t * t)
                    sn = cs * t
                    Ap = A[:, p].copy()
                    A[:, p] = cs * Ap - sn * A[:, q]
                    A[:, q] = sn * Ap + cs * A[:, q]
                    Vp = V[:, p].copy()
                    V[:, p] = cs * Vp - sn * V[:, q]
                    V[:, q] = sn * Vp + cs * V[:, q]
            if not rotated:
                converged = True
                break
        if not converged:
            raise RuntimeError("jacobi svd did not converge within the sweep cap")
    s = np.sqrt(np.sum(A * A, axis=0))
    order = np.argsort(-s, kind="stable")
    s = s[order]
    A = A[:, order]
    V = V[:, order]
    U = np.zeros((r, c))
    for j in range(c):
        if s[j] > 0.0:
            U[:, j] = A[:, j] / s[j]
    return U, s, V


def svd_small(M) -> np.ndarray:
    """Singular values of a small dense matrix, decreasing."""
    _, s, _ = svd_full(M)
    return s


def pinv_small(M) -> np.ndarray:
    """Moore-Penrose pseudoinverse with SVD truncation.

    Singular values at or below ``max(rows, cols) * eps * sigma_1`` are
    treated as zero.
    """
    M = np.asarray(M, float)
    U, s, V = svd_full(M)
    P = np.zeros((M.shape[1], M.shape[0]))
    if s.size == 0 or s[0] == 0.0:
        return P
    tol = max(M.shape) * _EPS * s[0]
    for j in range(s.size):
        if s[j] > tol:
            P += np.outer(V[:, j], U[:, j]) / s[j]
    return P
