"""Pivoted flexible Hessenberg processes, square and rectangular.

Both processes build a solution basis one column per step using only
operator applications, entry reads at pivot positions, elementwise
updates, and magnitude comparisons: no inner products anywhere, which
is what makes them robust under simulated low precision (comparisons
are exact; there are no long accumulations to overflow).

The square process factors A Z_k = U_{k+1} H_{k+1,k} with row-pivoted
U; the generalized process additionally maintains a second basis from
transpose applications, A^T U_{k+1} = V_{k+1} T_{k+1}, and works for
rectangular A.  Row pivoting normalizes each new basis vector by its
entry of largest magnitude (first index wins ties), so the pivoted
bases are exactly unit lower triangular in any arithmetic: the
elimination subtracts coefficient * 1 from the very entry the
coefficient was read at, and x - x is exact even when every operation
is rounded.

Preconditioned directions are materialized lazily: the normalized
candidate of step k is stored pending, and the preconditioner built
from iterate k-1 turns it into the k-th column of Z at the start of the
next step.  That makes iteration-dependent preconditioning possible at
all, and a state holding a pending vector plus k completed columns is
the natural snapshot between solver iterations.
"""

from __future__ import annotations

import numpy as np

from .linalg import norm_inf
from .precond import DiagonalPreconditioner, IdentityPreconditioner

BREAKDOWN_RTOL = 1e-14


def _fmt(ctx, x):
    if ctx is not None and getattr(ctx, "rounds", False):
        return ctx.to_format(np.asarray(x, float))
    return np.asarray(x, float)


def _sub(ctx, x, y):
    if ctx is not None and getattr(ctx, "rounds", False):
        return ctx.sub(x, y)
    return x - y


def _smul(ctx, a, v):
    if ctx is not None and getattr(ctx, "rounds", False):
        return ctx.mul(a, v)
    return a * v


def _div(ctx, v, a):
    if ctx is not None and getattr(ctx, "rounds", False):
        return ctx.div(v, a)
    return v / a


class FlexFactorization:
    """Incremental state of either process.

    Completed columns live in ``Z``/``U``/``V`` (python lists of
    vectors; the assembled matrices are properties).  ``pending_v`` is
    the normalized candidate whose preconditioned direction has not
    been built yet.  On breakdown the partial factorization stays
    valid: the dropped H (or T) entry is zero, so identity checks hold
    with the shorter basis.
    """

    def __init__(self, kind: str, m: int, n: int, beta: float):
        self.kind = kind
        self.m = m
        self.n = n
        self.beta = beta
        self.Zcols: list = []
        self.Ucols: list = []
        self.Vcols: list = [] if kind == "generalized" else self.Ucols
        self.Hcols: list = []
        self.Tcols: list = []
        self.imcols: list = []         # raw images A z_k, pre-elimination
        self.q = np.arange(m)          # row pivots of U
        self.g = np.arange(n) if kind == "generalized" else self.q
        self.pending_v = None
        self.breakdown = False
        self.breakdown_site = None
        self.scale = 0.0

    # -- assembled views ----------------------------------------------------

    @property
    def k(self) -> int:
        return len(self.Zcols)

    @property
    def Z(self) -> np.ndarray:
        if not self.Zcols:
            return np.zeros((self.n, 0))
        return np.column_stack(self.Zcols)

    @property
    def U(self) -> np.ndarray:
        if not self.Ucols:
            return np.zeros((self.m, 0))
        return np.column_stack(self.Ucols)

    @property
    def V(self) -> np.ndarray:
        if not self.Vcols:
            return np.zeros((self.n if self.kind == "generalized" else self.m, 0))
        return np.column_stack(self.Vcols)

    @property
    def images(self) -> np.ndarray:
        """Columns A z_1 .. A z_k as computed, before elimination."""
        if not self.imcols:
            return np.zeros((self.m, 0))
        return np.column_stack(self.imcols)

    @property
    def H(self) -> np.ndarray:
        k = len(self.Hcols)
        Hm = np.zeros((k + 1, k))
        for j, c in enumerate(self.Hcols):
            Hm[: j + 2, j] = c
        return Hm

    @property
    def T(self) -> np.ndarray:
        kk = len(self.Tcols)
        Tm = np.zeros((kk, kk))
        for j, c in enumerate(self.Tcols):
            Tm[: j + 1, j] = c
        return Tm

    def _tol(self) -> float:
        return BREAKDOWN_RTOL * max(1.0, self.scale)


def init_hessenberg(A, b, x0=None, ctx=None) -> FlexFactorization:
    """Start the square process: pivoted normalization of the residual."""
    m, n = A.shape
    if m != n:
        raise ValueError("the square process needs a square operator")
    b = _fmt(ctx, b)
    if x0 is None:
        r0 = b.copy()
    else:
        r0 = _sub(ctx, b, A.apply(_fmt(ctx, x0), ctx))
    i = int(np.argmax(np.abs(r0)))
    beta = float(r0[i])
    if beta == 0.0:
        raise ValueError("zero initial residual")
    state = FlexFactorization("hessenberg", m, n, beta)
    state.scale = norm_inf(r0)
    state.q[[0, i]] = state.q[[i, 0]]
    v1 = _div(ctx, r0, beta)
    state.Ucols.append(v1)
    state.pending_v = v1
    return state


def flex_hessenberg_step(state: FlexFactorization, A, P_next,
                         ctx=None) -> FlexFactorization:
    """Append one column: z_k, its image, elimination, pivot, normalize."""
    if state.breakdown or state.pending_v is None:
        return state
    z = (state.pending_v if P_next is None
         else P_next.apply(state.pending_v, ctx))
    state.Zcols.append(np.asarray(z, float))
    state.pending_v = None
    k = len(state.Zcols)
    v = A.apply(state.Zcols[-1], ctx)
    state.imcols.append(v)             # elimination rebinds, never mutates
    state.scale = max(state.scale, norm_inf(v))
    col = np.zeros(k + 1)
    for j in range(k):
        h = float(v[state.q[j]])
        col[j] = h
        v = _sub(ctx, v, _smul(ctx, h, state.Ucols[j]))
    state.Hcols.append(col)
    if k < state.n:
        tail = state.q[k:]
        rel = int(np.argmax(np.abs(v[tail])))
        piv = float(v[tail[rel]])
        if abs(piv) > state._tol():
            col[k] = piv
            state.q[[k, k + rel]] = state.q[[k + rel, k]]
            vk1 = _div(ctx, v, piv)
            state.Ucols.append(vk1)
            state.pending_v = vk1
            return state
    state.breakdown = True
    state.breakdown_site = "v"
    return state


def init_gen_hessenberg(A, b, x0=None, ctx=None) -> FlexFactorization:
    """Start the rectangular process: pivoted r0, then pivoted A^T u1."""
    m, n = A.shape
    b = _fmt(ctx, b)
    if x0 is None:
        r0 = b.copy()
    else:
        r0 = _sub(ctx, b, A.apply(_fmt(ctx, x0), ctx))
    i = int(np.argmax(np.abs(r0)))
    beta = float(r0[i])
    if beta == 0.0:
        raise ValueError("zero initial residual")
    state = FlexFactorization("generalized", m, n, beta)
    state.scale = norm_inf(r0)
    state.q[[0, i]] = state.q[[i, 0]]
    u1 = _div(ctx, r0, beta)
    state.Ucols.append(u1)
    v = A.apply_transpose(u1, ctx)
    state.scale = max(state.scale, norm_inf(v))
    i = int(np.argmax(np.abs(v)))
    t11 = float(v[i])
    if t11 == 0.0:
        raise ValueError("A^T annihilates the normalized residual")
    state.g[[0, i]] = state.g[[i, 0]]
    v1 = _div(ctx, v, t11)
    state.Vcols.append(v1)
    state.Tcols.append(np.array([t11]))
    state.pending_v = v1
    return state


def flex_gen_hessenberg_step(state: FlexFactorization, A, P_next,
                             ctx=None) -> FlexFactorization:
    """One rectangular step: u-recurrence, then the transpose v-recurrence."""
    if state.breakdown or state.pending_v is None:
        return state
    z = (state.pending_v if P_next is None
         else P_next.apply(state.pending_v, ctx))
    state.Zcols.append(np.asarray(z, float))
    state.pending_v = None
    k = len(state.Zcols)
    u = A.apply(state.Zcols[-1], ctx)
    state.imcols.append(u)             # elimination rebinds, never mutates
    state.scale = max(state.scale, norm_inf(u))
    hcol = np.zeros(k + 1)
    for j in range(k):
        h = float(u[state.q[j]])
        hcol[j] = h
        u = _sub(ctx, u, _smul(ctx, h, state.Ucols[j]))
    state.Hcols.append(hcol)
    if k >= state.m:
        state.breakdown = True
        state.breakdown_site = "u"
        return state
    tail = state.q[k:]
    rel = int(np.argmax(np.abs(u[tail])))
    piv = float(u[tail[rel]])
    if abs(piv) <= state._tol():
        state.breakdown = True
        state.breakdown_site = "u"
        return state
    hcol[k] = piv
    state.q[[k, k + rel]] = state.q[[k + rel, k]]
    uk1 = _div(ctx, u, piv)
    state.Ucols.append(uk1)

    v = A.apply_transpose(uk1, ctx)
    state.scale = max(state.scale, norm_inf(v))
    tcol = np.zeros(k + 1)
    for j in range(k):
        t = float(v[state.g[j]])
        tcol[j] = t
        v = _sub(ctx, v, _smul(ctx, t, state.Vcols[j]))
    state.Tcols.append(tcol)
    if k >= state.n:
        state.breakdown = True
        state.breakdown_site = "v"
        return state
    tail = state.g[k:]
    rel = int(np.argmax(np.abs(v[tail])))
    piv = float(v[tail[rel]])
    if abs(piv) <= state._tol():
        state.breakdown = True
        state.breakdown_site = "v"
        return state
    tcol[k] = piv
    state.g[[k, k + rel]] = state.g[[k + rel, k]]
    vk1 = _div(ctx, v, piv)
    state.Vcols.append(vk1)
    state.pending_v = vk1
    return state


# ---------------------------------------------------------------------------
# preconditioner plans


class PreconditionerPlan:
    """Yields the preconditioner for step k (1-based), given the previous
    solver iterate (None during pure factorization runs)."""

    def preconditioner(self, k: int, x_prev):
        raise NotImplementedError


class IdentityPlan(PreconditionerPlan):
    def preconditioner(self, k, x_prev):
        return IdentityPreconditioner()


class FixedPreconditionerPlan(PreconditionerPlan):
    def __init__(self, precond):
        self.precond = precond

    def preconditioner(self, k, x_prev):
        return self.precond


class SeededDiagonalPlan(PreconditionerPlan):
    """Independent random positive diagonal per step, reproducible in k."""

    def __init__(self, n: int, seed: int, lo: float = 0.5, hi: float = 2.0):
        self.n, self.seed, self.lo, self.hi = n, seed, lo, hi

    def preconditioner(self, k, x_prev):
        rng = np.random.default_rng((self.seed, k))
        return DiagonalPreconditioner(rng.uniform(self.lo, self.hi, self.n))


def run_factorization(A, b, x0=None, k_max: int = 0,
                      plan: PreconditionerPlan = None, ctx=None,
                      kind: str = None) -> FlexFactorization:
    """Initialize and advance min(k_max, breakdown) steps under a plan."""
    if kind is None:
        kind = "hessenberg" if A.shape[0] == A.shape[1] else "generalized"
    if plan is None:
        plan = IdentityPlan()
    if kind == "hessenberg":
        state = init_hessenberg(A, b, x0, ctx)
        step = flex_hessenberg_step
    elif kind == "generalized":
        state = init_gen_hessenberg(A, b, x0, ctx)
        step = flex_gen_hessenberg_step
    else:
        raise ValueError(f"unknown kind {kind!r}")
    for k in range(1, k_max + 1):
        if state.breakdown:
            break
        step(state, A, plan.preconditioner(k, None), ctx)
    return state
