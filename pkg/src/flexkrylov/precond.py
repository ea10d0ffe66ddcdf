"""Iteration-dependent right preconditioners encoding a variational prior.

A prior ``min ||A x - b||^2 + lam * sum phi((L x)_i)`` with a concave
penalty is handled by quadratic majorization: at each outer iterate the
penalty is replaced by its tangent quadratic, which turns the prior into
a weighted Tikhonov term ``lam ||W L x||^2``.  The solvers then
precondition with (pseudo)inverses of ``W L``.

Three application modes are provided: plain inverses for invertible
``W L``, the A-weighted pseudoinverse for rank-deficient ``L`` (exact
and a cheaper approximate form), and a Schur-complement operator that
maps the whole problem into the transformed space where standard square
solvers run.

Dense pseudoinverse solves go through Gram-matrix factorizations from
:mod:`.linalg`; they never call the system operator, so instrumented
matvec budgets see only the solver's own applications.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import (LinearOperator, lu_partial_pivot, forward_substitution,
                     back_substitution, norm_inf, pinv_small, solve_dense,
                     svd_small)


# ---------------------------------------------------------------------------
# weights


@dataclass(frozen=True)
class WeightRule:
    """Penalty shape: exponent p and the smoothing parameter tau."""

    p: float
    tau: float

    def __post_init__(self):
        if not 0.0 < self.p <= 2.0:
            raise ValueError("p must lie in (0, 2]")
        if self.tau <= 0.0:
            raise ValueError("tau must be positive")


def weights(rule: WeightRule, z) -> np.ndarray:
    """Diagonal of W: (z_i^2 + tau^2)^((p-2)/4), finite and positive.

    At z = 0 this evaluates to tau^((p-2)/2), which is exactly the
    degenerate first-iteration weight for a zero starting iterate.
    """
    z = np.asarray(z, float)
    return (z * z + rule.tau ** 2) ** ((rule.p - 2.0) / 4.0)


def default_tau(x_proxy) -> float:
    """Scale-aware smoothing: 1e-4 of the iterate's sup-norm (at least 1e-4)."""
    return 1e-4 * max(1.0, norm_inf(np.asarray(x_proxy, float)))


# ---------------------------------------------------------------------------
# regularization operators


class RegOperator:
    """Regularization matrix L with an explicit basis K for its null space.

    ``L`` is kept dense (desk scale); ``K`` has orthonormal columns and
    may be empty.  Pseudoinverse applications dispatch on ``kind`` so
    the first-difference operator gets its closed forms.
    """

    def __init__(self, kind: str, L: np.ndarray, K: np.ndarray):
        self.kind = kind
        self.L = np.asarray(L, float)
        self.K = np.asarray(K, float).reshape(self.L.shape[1], -1)
        self._pinv = None
        if self.K.shape[1]:
            num = math.sqrt(((self.L @ self.K) ** 2).sum())
            den = (math.sqrt((self.L ** 2).sum())
                   * math.sqrt((self.K ** 2).sum()))
            if num > 1e-12 * max(den, 1e-300):
                raise ValueError("K does not span the null space of L")

    @property
    def shape(self):
        return self.L.shape

    @property
    def null_rank(self) -> int:
        return self.K.shape[1]

    def apply(self, x):
        return self.L @ x

    def _dense_pinv(self):
        if self._pinv is None:
            self._pinv = pinv_small(self.L)
        return self._pinv

    def pinv_apply(self, y):
        """Minimum-norm solution of L x = y (Moore-Penrose L+ y)."""
        if self.kind == "identity":
            return np.asarray(y, float)
        if self.kind == "d1":
            # x_j = -sum_{i<j} y_i up to the constant fixing zero mean
            t = np.concatenate([[0.0], -np.cumsum(np.asarray(y, float))])
            return t - t.mean()
        return self._dense_pinv() @ y

    def pinv_transpose_apply(self, s):
        """(L+)^T s."""
        if self.kind == "identity":
            return np.asarray(s, float)
        if self.kind == "d1":
            w = np.asarray(s, float)
            w = w - w.mean()
            return np.cumsum(w)[:-1]
        return self._dense_pinv().T @ s


def identity_operator(n: int) -> RegOperator:
    return RegOperator("identity", np.eye(n), np.zeros((n, 0)))


def d1_operator(n: int) -> RegOperator:
    """First differences (D x)_i = x_i - x_{i+1}, null space = constants."""
    if n < 2:
        raise ValueError("n must be at least 2")
    L = np.zeros((n - 1, n))
    idx = np.arange(n - 1)
    L[idx, idx] = 1.0
    L[idx, idx + 1] = -1.0
    K = np.full((n, 1), 1.0 / math.sqrt(n))
    return RegOperator("d1", L, K)


def custom_operator(L, K=None) -> RegOperator:
    L = np.asarray(L, float)
    if K is None:
        K = np.zeros((L.shape[1], 0))
    return RegOperator("custom", L, K)


# ---------------------------------------------------------------------------
# A-weighted pseudoinverse


class _GramPinv:
    """Min-norm pseudoinverse application for a full-rank dense B."""

    def __init__(self, B):
        self.B = np.asarray(B, float)
        d, n = self.B.shape
        self.wide = d <= n
        G = self.B @ self.B.T if self.wide else self.B.T @ self.B
        self.perm, self.Lf, self.Uf = lu_partial_pivot(G)

    def _gram_solve(self, rhs):
        y = forward_substitution(self.Lf, np.asarray(rhs, float)[self.perm])
        return back_substitution(self.Uf, y)

    def apply(self, s):
        if self.wide:
            return self.B.T @ self._gram_solve(s)
        return self._gram_solve(self.B.T @ s)


class NullspaceCorrector:
    """Cached pieces built from A and K: the oblique projector
    E = I - K (A K)+ A and the range projector P = I - AK (K^T A K)^{-1} K^T.

    Rejects rank-deficient A K, which would mean the null spaces of A
    and L intersect nontrivially.
    """

    def __init__(self, regop: RegOperator, A):
        self.K = regop.K
        self.r = self.K.shape[1]
        if self.r == 0:
            return
        if A is None:
            raise ValueError("operators with a nontrivial null space need A")
        Ad = A.to_dense() if isinstance(A, LinearOperator) else np.asarray(A, float)
        self.AK = Ad @ self.K
        svals = svd_small(self.AK)
        if svals[-1] <= max(self.AK.shape) * np.finfo(float).eps * svals[0]:
            raise ValueError("A K is rank deficient: null spaces of A and L "
                             "intersect")
        self.pinv_AK = pinv_small(self.AK)   # also the lstsq fit onto R(AK)
        self.ME = self.pinv_AK @ Ad          # E y = y - K (ME y)
        self.KtAK = self.K.T @ self.AK       # for P (square A)

    def e_apply(self, y):
        if self.r == 0:
            return np.asarray(y, float)
        return y - self.K @ (self.ME @ y)

    def p_apply(self, v):
        if self.r == 0:
            return np.asarray(v, float)
        return v - self.AK @ solve_dense(self.KtAK, self.K.T @ v)


def a_weighted_pinv_apply(B, K, A, s, mode: str = "exact", *,
                          regop: RegOperator = None, weight_diag=None):
    """Apply the A-weighted pseudoinverse of B = W L to s.

    exact: E B+ s; approx: E L+ W^{-1} s (needs ``regop`` and
    ``weight_diag``).  E = I - K (A K)+ A, the oblique projector that
    removes the component A cannot distinguish inside N(L).
    """
    B = B.to_dense() if isinstance(B, LinearOperator) else np.asarray(B, float)
    K = np.asarray(K, float).reshape(B.shape[1], -1)
    holder = custom_operator(B, K) if K.shape[1] else custom_operator(B)
    corr = NullspaceCorrector(holder, A if K.shape[1] else None)
    if mode == "exact":
        y = _GramPinv(B).apply(np.asarray(s, float))
    elif mode == "approx":
        if regop is None or weight_diag is None:
            raise ValueError("approx mode needs regop and weight_diag")
        y = regop.pinv_apply(np.asarray(s, float) / np.asarray(weight_diag, float))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return corr.e_apply(y)


# ---------------------------------------------------------------------------
# flexible preconditioners


class IdentityPreconditioner:
    def apply(self, s, ctx=None):
        return np.asarray(s, float)


class DiagonalPreconditioner:
    """z = d * s; rounded elementwise under a chopping context."""

    def __init__(self, d):
        self.d = np.asarray(d, float)

    def apply(self, s, ctx=None):
        if ctx is not None and getattr(ctx, "rounds", False):
            return ctx.mul(self.d, np.asarray(s, float))
        return self.d * np.asarray(s, float)


class FlexPreconditioner:
    """One iteration's right preconditioner, immutable once built.

    modes: ``inverse`` (diagonal W L with identity L), ``a_weighted_exact``
    (E (W L)+), ``a_weighted_approx`` (E L+ W^{-1}), ``schur`` (plain
    (W L)+; inside the Schur operator the projector P absorbs E).  In
    schur mode ``pinv="approx"`` swaps the exact (W L)+ for the cheap
    surrogate L+ W^{-1}; the other modes fix their own pinv flavor.
    """

    def __init__(self, regop: RegOperator, weight_diag, A=None,
                 mode: str = "a_weighted_approx", corrector=None,
                 pinv: str = "exact"):
        if mode not in ("inverse", "a_weighted_exact", "a_weighted_approx",
                        "schur"):
            raise ValueError(f"unknown mode {mode!r}")
        if pinv not in ("exact", "approx"):
            raise ValueError(f"unknown pinv {pinv!r}")
        self.regop = regop
        self.w = np.asarray(weight_diag, float)
        self.mode = mode
        self.pinv = pinv
        if mode == "inverse":
            if regop.kind != "identity":
                raise ValueError("inverse mode needs an invertible "
                                 "(identity) regularizer")
            self.corr = None
            return
        self.corr = corrector if corrector is not None else \
            NullspaceCorrector(regop, A)
        if mode == "a_weighted_exact" or (mode == "schur" and pinv == "exact"):
            if regop.kind == "identity":
                self._bpinv = None  # diagonal shortcut
            else:
                self._bpinv = _GramPinv(self.w[:, None] * regop.L)

    def apply(self, s, ctx=None):
        s = np.asarray(s, float)
        if self.mode == "inverse":
            if ctx is not None and getattr(ctx, "rounds", False):
                return ctx.div(s, self.w)
            return s / self.w
        if self.mode == "a_weighted_approx" or \
                (self.mode == "schur" and self.pinv == "approx"):
            y = self.regop.pinv_apply(s / self.w)
        else:
            y = (s / self.w) if self._bpinv is None else self._bpinv.apply(s)
        if self.mode == "schur":
            return y
        return self.corr.e_apply(y)


# ---------------------------------------------------------------------------
# Schur-complement formulation


class SchurOperator(LinearOperator):
    """Transformed square operator s -> (L+)^T P A (W L)+ s.

    ``P = I - AK (K^T A K)^{-1} K^T`` projects out R(A K).  Composing
    through P makes the oblique correction E inside the A-weighted
    pseudoinverse redundant (P A E = P A), so the inner solve is the
    plain minimum-norm one.  The transformed right-hand side is
    (L+)^T P b.
    """

    def __init__(self, A, regop: RegOperator, weight_diag, corrector=None):
        self.A = A
        self.Ad = A.to_dense() if isinstance(A, LinearOperator) else np.asarray(A, float)
        if self.Ad.shape[0] != self.Ad.shape[1]:
            raise ValueError("the Schur formulation needs a square operator")
        self.regop = regop
        self.inner = FlexPreconditioner(regop, weight_diag, A=self.Ad,
                                        mode="schur", corrector=corrector)
        self.corr = self.inner.corr
        d = regop.shape[0]
        super().__init__((d, d))

    def p_apply(self, v):
        return self.corr.p_apply(np.asarray(v, float))

    def _apply(self, s):
        y = self.inner.apply(s)
        return self.regop.pinv_transpose_apply(self.p_apply(self.Ad @ y))

    def transform_rhs(self, b):
        return self.regop.pinv_transpose_apply(self.p_apply(np.asarray(b, float)))


def schur_operator(A, regop: RegOperator, weight_diag) -> SchurOperator:
    return SchurOperator(A, regop, weight_diag)


def recover_solution(s, precond, A, b) -> np.ndarray:
    """Back-transform s and complete the null-space component.

    x = (W L)+_A s + K s_A, with s_A the least-squares fit of the
    remaining residual onto R(A K).
    """
    if precond.mode == "schur":
        x_part = precond.corr.e_apply(precond.apply(s))
    else:
        x_part = precond.apply(s)
    corr = precond.corr
    if corr is None or corr.r == 0:
        return x_part
    r = np.asarray(b, float) - (A.apply(x_part) if isinstance(A, LinearOperator)
                                else np.asarray(A, float) @ x_part)
    s_A = corr.pinv_AK @ r
    return x_part + corr.K @ s_A


# ---------------------------------------------------------------------------
# smoothed objective and its quadratic tangent majorant


def smoothed_penalty(z, rule: WeightRule):
    """(2/p) (z^2 + tau^2)^{p/2}, summed; smooth stand-in for |z|^p."""
    z = np.asarray(z, float)
    return float(((z * z + rule.tau ** 2) ** (rule.p / 2.0)).sum()
                 * (2.0 / rule.p))


def smoothed_objective(x, A, b, regop: RegOperator, lam: float,
                       rule: WeightRule) -> float:
    """||A x - b||^2 + lam * smoothed penalty of L x."""
    Ax = A.apply(x) if isinstance(A, LinearOperator) else np.asarray(A) @ x
    r = Ax - np.asarray(b, float)
    return float(r @ r) + lam * smoothed_penalty(regop.apply(x), rule)


def majorant_offset(z_anchor, rule: WeightRule) -> float:
    """c so the weighted quadratic touches the penalty at the anchor.

    Each term phi(z) - w^2 z^2 with w the anchor weight; positive since
    the quadratic drops a concave function's tangent constant.
    """
    z = np.asarray(z_anchor, float)
    w2 = weights(rule, z) ** 2
    phi = (2.0 / rule.p) * (z * z + rule.tau ** 2) ** (rule.p / 2.0)
    return float((phi - w2 * z * z).sum())


def quadratic_majorant_value(x, A, b, regop: RegOperator, lam: float,
                             rule: WeightRule, z_anchor) -> float:
    """Value of the tangent quadratic model at x, anchored at z_anchor."""
    Ax = A.apply(x) if isinstance(A, LinearOperator) else np.asarray(A) @ x
    r = Ax - np.asarray(b, float)
    w = weights(rule, z_anchor)
    wlx = w * regop.apply(x)
    return float(r @ r) + lam * float(wlx @ wlx) \
        + lam * majorant_offset(z_anchor, rule)
