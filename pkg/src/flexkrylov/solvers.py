"""Iteration drivers tying factorization, priors and diagnostics together.

A run owns one factorization state, one prior, one parameter rule and
one trace.  Each iteration builds the preconditioner from the previous
iterate, extends the basis by one column (the only audited operator
application), solves the small projected problem in float64, and
records a row with residual, objective, lambda and the sufficient-
decrease report.  The pivoted drivers never form an inner product
inside basis construction; the Arnoldi and bidiagonalization baselines
route every reduction through the arithmetic context, which is what
lets reduced precision overflow them while the pivoted processes keep
going.

Diagnostics (dense residuals, thresholds, parameter sweeps) run in
plain float64 on the dense operator and stay outside the operation
counters, so counter-based budget checks see the recurrences only.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import (MonotonicityReport, report_from_threshold,
                          threshold_prop1, threshold_prop2, threshold_sketch)
from .hessenberg import (BREAKDOWN_RTOL, FlexFactorization, _div, _fmt,
                         flex_gen_hessenberg_step, flex_hessenberg_step,
                         init_gen_hessenberg, init_hessenberg)
from .linalg import (RankDeficiencyWarning, lu_partial_pivot, norm_inf,
                     orthonormal_columns, qr_least_squares, svd_small)
from .lowprec import PASSTHROUGH, parse_precision
from .precond import (FlexPreconditioner, NullspaceCorrector, RegOperator,
                      WeightRule, default_tau, majorant_offset,
                      smoothed_objective, weights)
from .projected import (ProjectedProblem, solve_hybrid, solve_irw,
                        solve_plain, solve_sketched)
from .regparam import (FilteredProblem, ParamRule, lambda_grid,
                       omega_schedule, select_discrepancy, select_optimal,
                       select_wgcv)
from .sketch import (approximate_leverage_scores, build_subsampling_sketch,
                     estimate_distortion)

STAGNATION_RTOL = 1e-12
STAGNATION_STEPS = 5
OPTIMAL_GRID_POINTS = 40   # coarse grid; the oracle rule solves per point

_METHODS = ("fcmrh", "flslu", "gmres", "lsqr", "cmrh", "lslu")
_VARIANTS = ("plain", "hybrid", "irw")


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class SketchPlan:
    """Row-sampling sizes and seed; 0 sizes mean 4 * k_max at run time."""

    s1: int = 0
    s2: int = 0
    seed: int = 0
    refresh_every: int = 5


@dataclass(eq=False)
class Prior:
    """Penalty shape: elementwise weight rule plus the operator L.

    ``auto_tau`` re-resolves the smoothing width from the first iterate:
    iteration 1 runs with the provisional ``rule.tau``, then
    ``default_tau(x_1)`` is frozen for the rest of the run.
    """

    rule: WeightRule
    regop: RegOperator
    auto_tau: bool = False


@dataclass(eq=False)
class SolverConfig:
    method: str = "fcmrh"
    variant: str = "plain"
    sketched: bool = False
    prior: Prior = None
    param_rule: ParamRule = None
    k_max: int = 20
    precision: str = "fp64"
    seed: int = 0
    sketch: SketchPlan = None
    norms_only: bool = False
    pinv: str = "exact"        # pseudoinverse flavor in transformed runs


def _context(precision):
    """Rounding context, or None for plain float64."""
    if precision is None:
        return None
    ctx = parse_precision(precision) if isinstance(precision, str) else precision
    if ctx is None or not getattr(ctx, "rounds", False):
        return None
    return ctx


def _validate(cfg: SolverConfig, A) -> None:
    if cfg.method not in _METHODS:
        raise ValueError(f"unknown method {cfg.method!r}")
    if cfg.variant not in _VARIANTS:
        raise ValueError(f"unknown variant {cfg.variant!r}")
    if cfg.k_max < 1:
        raise ValueError("k_max must be positive")
    if cfg.pinv not in ("exact", "approx"):
        raise ValueError(f"unknown pinv flavor {cfg.pinv!r}")
    m, n = A.shape
    transformed = cfg.prior is not None and cfg.prior.regop.kind != "identity"
    if transformed:
        if cfg.method != "fcmrh":
            raise ValueError("a non-invertible penalty operator needs the "
                             "flexible square method")
        if m != n:
            raise ValueError("the transformed square system needs square A")
        if cfg.variant != "plain":
            raise ValueError("transformed runs carry no explicit penalty "
                             "in the projected problem")
        if cfg.sketched:
            raise ValueError("transformed runs are not sketched")
    elif cfg.method in ("gmres", "cmrh", "fcmrh") and m != n:
        raise ValueError(f"{cfg.method} needs a square operator")
    if cfg.method in ("cmrh", "lslu") and cfg.prior is not None:
        raise ValueError("the unpreconditioned baselines take no prior")
    if cfg.method in ("gmres", "lsqr"):
        if cfg.variant != "plain" or cfg.prior is not None or cfg.sketched:
            raise ValueError("reference baselines run plain and unsketched")
    if cfg.variant == "irw":
        if cfg.prior is None:
            raise ValueError("reweighting needs a prior")
        if cfg.method not in ("fcmrh", "flslu"):
            raise ValueError("reweighting needs a flexible method")
    if cfg.variant in ("hybrid", "irw") and cfg.param_rule is None:
        raise ValueError("regularized variants need a parameter rule")
    if cfg.variant == "plain" and cfg.param_rule is not None:
        pr = cfg.param_rule
        if not (pr.kind == "fixed" and pr.fixed_value == 0.0):
            raise ValueError(
                "the plain variant takes no regularization parameter")
    if cfg.sketched and cfg.sketch is None:
        raise ValueError("sketched runs need a sketch plan")


# ---------------------------------------------------------------------------
# trace


@dataclass(eq=False)
class TraceRow:
    it: int
    res_norm: float
    objective: float
    lam: float
    proj_objective: float = np.nan
    report: MonotonicityReport = None
    mono_prev: float = np.nan   # exact functional at x_{k-1}, current params
    mono_curr: float = np.nan   # exact functional at x_k, current params
    rel_error: float = np.nan
    x: np.ndarray = None
    x_norm: float = 0.0


@dataclass(eq=False)
class SolverTrace:
    method: str
    variant: str
    sketched: bool = False
    rows: list = field(default_factory=list)
    halt_reason: str = "completed"
    halt_iteration: int = 0
    notes: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def res_norms(self) -> np.ndarray:
        return np.array([r.res_norm for r in self.rows])

    @property
    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.rows])

    @property
    def lams(self) -> np.ndarray:
        return np.array([r.lam for r in self.rows])

    @property
    def rel_errors(self) -> np.ndarray:
        return np.array([r.rel_error for r in self.rows])

    @property
    def iterates(self) -> list:
        return [r.x for r in self.rows]

    def best_row(self) -> TraceRow:
        """Row with the smallest recorded relative error."""
        errs = self.rel_errors
        if np.isnan(errs).all():
            raise ValueError("no relative errors recorded")
        return self.rows[int(np.nanargmin(errs))]


def relative_error_history(trace: SolverTrace, x_true) -> np.ndarray:
    """Per-iteration ||x_k - x_true|| / ||x_true||, recomputed when possible."""
    xt = np.asarray(x_true, float)
    d = float(np.linalg.norm(xt))
    if d == 0.0:
        raise ValueError("x_true must be nonzero")
    out = []
    for r in trace.rows:
        if r.x is not None:
            out.append(float(np.linalg.norm(r.x - xt)) / d)
        elif np.isfinite(r.rel_error):
            out.append(float(r.rel_error))
        else:
            raise ValueError("trace has neither snapshots nor stored errors")
    return np.array(out)


# ---------------------------------------------------------------------------
# transformed (null-space split) system pieces


class _EffectiveOperator:
    """s-space operator x -> (L+)^T P (A x); only the wrapped application
    is audited, and the projector algebra stays in float64 even when the
    inner application rounds."""

    counted = False

    def __init__(self, A, regop: RegOperator, corr: NullspaceCorrector):
        self.Aop = A
        self.regop = regop
        self.corr = corr
        self.shape = (regop.shape[0], A.shape[1])

    def apply(self, x, ctx=None):
        v = self.Aop.apply(x, ctx)
        return self.regop.pinv_transpose_apply(self.corr.p_apply(
            np.asarray(v, float)))


def _dense_effective(Ad: np.ndarray, regop: RegOperator,
                     corr: NullspaceCorrector) -> np.ndarray:
    cols = [regop.pinv_transpose_apply(corr.p_apply(Ad[:, j]))
            for j in range(Ad.shape[1])]
    return np.column_stack(cols)


def _state_from_residual(r0, n_rows: int, ctx) -> FlexFactorization:
    """Square-process start from an explicit residual vector."""
    r0 = _fmt(ctx, r0)
    i = int(np.argmax(np.abs(r0)))
    beta = float(r0[i])
    if beta == 0.0:
        raise ValueError("zero initial residual")
    state = FlexFactorization("hessenberg", n_rows, n_rows, beta)
    state.scale = norm_inf(r0)
    state.q[[0, i]] = state.q[[i, 0]]
    u1 = _div(ctx, r0, beta)
    state.Ucols.append(u1)
    state.pending_v = u1
    return state


# ---------------------------------------------------------------------------
# shared helpers


def _safe_threshold(fn, *args) -> float:
    try:
        return float(fn(*args))
    except ValueError:
        return np.inf


def _sigma_extremes(M) -> tuple:
    """(largest, smallest) singular value, or None when degenerate."""
    M = np.atleast_2d(np.asarray(M, float))
    if min(M.shape) == 0:
        return None
    s = svd_small(M)
    if s[-1] <= 0.0:
        return None
    return float(s[0]), float(s[-1])


def _irw_blocks(WLZ):
    """Kept upper factor and the matching lower-factor columns.

    Mirrors the row-drop rule of the projected solver so both sides of
    the penalty sandwich come from the same elimination.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficiencyWarning)
        _, Lfac, Ufac = lu_partial_pivot(WLZ)
    tol = 1e-14 * max(norm_inf(WLZ), 1e-300)
    keep = [i for i in range(Ufac.shape[0]) if norm_inf(Ufac[i]) > tol]
    return Ufac[keep, :], Lfac[:, keep]


def _pooled_threshold(extremes) -> float:
    """k1/k2 - 1 for pinv factors pooled with the unscaled parts."""
    hi = [1.0]
    lo = [1.0]
    for e in extremes:
        if e is None:
            return np.inf
        smax, smin = e
        hi.append(1.0 / smin ** 2)
        lo.append(1.0 / smax ** 2)
    return max(hi) / min(lo) - 1.0


def _clamped_threshold(extremes) -> float:
    """k1/k2 - 1 pooling direct sigma ranges with the unscaled parts."""
    hi = [1.0]
    lo = [1.0]
    for e in extremes:
        if e is None:
            return np.inf
        smax, smin = e
        hi.append(smax ** 2)
        lo.append(smin ** 2)
    return max(hi) / min(lo) - 1.0


def _row0(trace: SolverTrace, b, n: int, x_true, norms_only: bool) -> float:
    bnorm = float(np.linalg.norm(b))
    rel = 1.0 if x_true is not None else np.nan
    trace.rows.append(TraceRow(0, bnorm, bnorm ** 2, 0.0,
                               proj_objective=bnorm ** 2,
                               rel_error=rel,
                               x=None if norms_only else np.zeros(n),
                               x_norm=0.0))
    return bnorm


def _finish(trace: SolverTrace, reason: str, iteration: int) -> SolverTrace:
    trace.halt_reason = reason
    trace.halt_iteration = iteration
    return trace


# ---------------------------------------------------------------------------
# flexible drivers


def run_fcmrh(cfg: SolverConfig, problem) -> SolverTrace:
    """Flexible pivoted solver on the square (or transformed square) system."""
    if cfg.method not in ("fcmrh", "cmrh"):
        raise ValueError(f"square driver got method {cfg.method!r}")
    return _run_flex(cfg, problem)


def run_flslu(cfg: SolverConfig, problem) -> SolverTrace:
    """Flexible pivoted solver on rectangular systems with a transpose."""
    if cfg.method not in ("flslu", "lslu"):
        raise ValueError(f"rectangular driver got method {cfg.method!r}")
    return _run_flex(cfg, problem)


def _run_flex(cfg: SolverConfig, problem) -> SolverTrace:
    A = problem.A
    _validate(cfg, A)
    ctx = _context(cfg.precision)
    b = np.asarray(problem.b, float)
    x_true = getattr(problem, "x_true", None)
    xt_norm = float(np.linalg.norm(x_true)) if x_true is not None else 0.0
    m, n = A.shape
    square = cfg.method in ("fcmrh", "cmrh")
    prior = cfg.prior
    regop = prior.regop if prior is not None else None
    transformed = regop is not None and regop.kind != "identity"
    Ad = A.to_dense()

    if transformed:
        corr = NullspaceCorrector(regop, A)
        b_eff = regop.pinv_transpose_apply(corr.p_apply(b))
        G = _EffectiveOperator(A, regop, corr)
        Gd = _dense_effective(Ad, regop, corr)
        n_rows = regop.shape[0]
        state = _state_from_residual(b_eff, n_rows, ctx)
    else:
        corr = None
        b_eff, G, Gd, n_rows = b, A, Ad, m
        state = (init_hessenberg(A, b, ctx=ctx) if square
                 else init_gen_hessenberg(A, b, ctx=ctx))

    trace = SolverTrace(cfg.method, cfg.variant, cfg.sketched)
    bnorm = _row0(trace, b, n, x_true, cfg.norms_only)
    if not np.isfinite(np.asarray(state.Ucols[-1])).all():
        return _finish(trace, "overflow", 1)

    # sketching state: the data-side sketch is drawn once per run
    sk1 = sk2 = None
    bsk = None
    Msk_cols: list = []
    if cfg.sketched:
        plan = cfg.sketch
        s1 = plan.s1 if plan.s1 else 4 * cfg.k_max
        sk1 = build_subsampling_sketch(n_rows, min(s1, n_rows),
                                       seed=plan.seed)
        bsk = sk1.apply(b_eff)

    tau_k = prior.rule.tau if prior is not None else 0.0
    x_prev = np.zeros(n)
    y_prev = np.zeros(0)
    res_prev = bnorm
    stag = 0
    LZcols: list = []

    step = flex_hessenberg_step if square or transformed \
        else flex_gen_hessenberg_step

    for k in range(1, cfg.k_max + 1):
        # -- preconditioner from the previous iterate
        if prior is None:
            P_k, rule_k, w_k, z_anchor = None, None, None, None
        else:
            rule_k = WeightRule(prior.rule.p, tau_k)
            z_anchor = regop.apply(x_prev)
            w_k = weights(rule_k, z_anchor)
            if transformed:
                P_k = FlexPreconditioner(regop, w_k, mode="schur",
                                         corrector=corr, pinv=cfg.pinv)
            else:
                P_k = FlexPreconditioner(regop, w_k, mode="inverse")

        # -- the audited basis extension
        step(state, G, P_k, ctx)
        newest = [state.Hcols[-1], state.Zcols[-1], state.Ucols[-1]]
        if not square and state.Tcols:
            newest += [state.Tcols[-1], state.Vcols[-1]]
        if not all(np.isfinite(np.asarray(v)).all() for v in newest):
            return _finish(trace, "overflow", k)

        # -- caches for the projected problem
        M = state.H
        rhs = np.zeros(k + 1)
        rhs[0] = state.beta
        if prior is not None:
            LZcols.append(regop.L @ state.Zcols[-1])
        WLZ = (w_k[:, None] * np.column_stack(LZcols)
               if cfg.variant == "irw" else None)
        if cfg.sketched:
            Msk_cols.append(sk1.apply(state.imcols[-1]))
            Msk = np.column_stack(Msk_cols)
            if k == 1 or k % plan.refresh_every == 0:
                span = np.column_stack(state.imcols + [b_eff])
                trace.notes["leverage_scores"] = \
                    approximate_leverage_scores(span)
                eps = estimate_distortion(sk1, orthonormal_columns(span),
                                          seed=plan.seed)
                trace.notes.setdefault("sketch_refresh", {})[k] = float(eps)
            if cfg.variant == "irw" and \
                    (sk2 is None or k % plan.refresh_every == 0):
                s2 = plan.s2 if plan.s2 else 4 * cfg.k_max
                rows2 = WLZ.shape[0]
                sk2 = build_subsampling_sketch(
                    rows2, min(s2, rows2),
                    scores=approximate_leverage_scores(WLZ),
                    seed=plan.seed + 7919 * k)
        else:
            Msk = None

        def proj_solve(lam: float) -> np.ndarray:
            if cfg.sketched:
                if cfg.variant == "plain":
                    return solve_sketched(ProjectedProblem(Msk, bsk), "plain")
                if cfg.variant == "hybrid":
                    return solve_sketched(
                        ProjectedProblem(Msk, bsk, None, lam), "hybrid")
                return solve_sketched(
                    ProjectedProblem(Msk, bsk, sk2.apply_matrix(WLZ), lam),
                    "irw")
            if cfg.variant == "plain":
                return solve_plain(ProjectedProblem(M, rhs))
            if cfg.variant == "hybrid":
                return solve_hybrid(ProjectedProblem(M, rhs, None, lam))
            return solve_irw(ProjectedProblem(M, rhs, None, lam), WLZ=WLZ)

        # -- regularization parameter for this iteration
        lam_k = _select_lambda(cfg, k, m, bnorm, Msk if cfg.sketched else M,
                               bsk if cfg.sketched else rhs, proj_solve,
                               state, trace)

        # -- solve and lift
        y_k = proj_solve(lam_k)
        x_part = state.Z @ y_k
        if transformed:
            r = b - Ad @ x_part
            x_k = x_part + corr.K @ (corr.pinv_AK @ r)
        else:
            x_k = x_part

        # -- float64 diagnostics
        res_true = float(np.linalg.norm(b - Ad @ x_k))
        pad = np.zeros(k)
        pad[:y_prev.size] = y_prev
        report, h_curr, exact_prev, exact_curr, objective = _flex_diagnostics(
            cfg, state, M, rhs, Msk, bsk, sk1, sk2, WLZ, lam_k, y_k, pad,
            x_prev, x_k, Gd, b_eff, Ad, b, rule_k, regop, z_anchor, res_true)

        rel = (float(np.linalg.norm(x_k - x_true)) / xt_norm
               if x_true is not None else np.nan)
        trace.rows.append(TraceRow(
            k, res_true, objective, lam_k,
            proj_objective=h_curr, report=report,
            mono_prev=exact_prev, mono_curr=exact_curr, rel_error=rel,
            x=None if cfg.norms_only else x_k,
            x_norm=float(np.linalg.norm(x_k))))

        if state.breakdown:
            return _finish(trace, f"breakdown:{state.breakdown_site}", k)
        if res_prev <= 0.0 or \
                abs(res_true - res_prev) < STAGNATION_RTOL * res_prev:
            stag += 1
            if stag >= STAGNATION_STEPS:
                return _finish(trace, "stagnation", k)
        else:
            stag = 0
        if prior is not None and prior.auto_tau and k == 1:
            tau_k = default_tau(x_k)
        x_prev, y_prev, res_prev = x_k, y_k, res_true

    return _finish(trace, "completed", cfg.k_max)


def _select_lambda(cfg, k, m, bnorm, M, rhs, proj_solve, state, trace):
    rule = cfg.param_rule
    if cfg.variant == "plain" or rule is None:
        return 0.0
    if rule.kind == "fixed":
        return float(rule.fixed_value)
    if rule.kind in ("discrepancy", "gcv", "wgcv"):
        fp = FilteredProblem(M, rhs)
        info = {}
        if rule.kind == "discrepancy":
            tau_nl = min(1.01 * rule.noise_level, 0.999)
            lam = select_discrepancy(fp, bnorm, tau_nl, info=info)
        else:
            omega = 1.0 if rule.kind == "gcv" else \
                omega_schedule(rule.omega, k, m)
            lam = select_wgcv(fp, omega, info=info)
        flag = info.get("flag", "ok")
        if flag != "ok":
            trace.notes.setdefault("lambda_flags", {})[k] = flag
        return float(lam)
    # oracle rule: coarse grid including the unregularized endpoint
    lams = [0.0] + list(lambda_grid(OPTIMAL_GRID_POINTS))
    Z = state.Z

    def x_of(lam):
        return Z @ proj_solve(lam)

    return float(select_optimal(lams, x_of, rule.x_true))


def _flex_diagnostics(cfg, state, M, rhs, Msk, bsk, sk1, sk2, WLZ, lam, y_k,
                      pad, x_prev, x_k, Gd, b_eff, Ad, b, rule_k, regop,
                      z_anchor, res_true):
    """Projected and exact functional pairs plus the decrease report.

    The compared pair is always evaluated under this iteration's
    functional (current lambda, weights and smoothing), so the
    sufficient-decrease implication is self-contained row by row.
    """
    if cfg.sketched:
        r_curr = Msk @ y_k - bsk
        r_prev = Msk @ pad - bsk
        span = np.column_stack(state.imcols + [b_eff])
        Q1 = orthonormal_columns(span)
    else:
        r_curr = M @ y_k - rhs
        r_prev = M @ pad - rhs
        Q1 = None
    h_curr = float(r_curr @ r_curr)
    h_prev = float(r_prev @ r_prev)

    if cfg.variant == "plain":
        if cfg.sketched:
            thr = _safe_threshold(threshold_sketch, sk1, Q1)
            src = "sketch"
        else:
            thr = _safe_threshold(threshold_prop1, state.U)
            src = "U_pinv"
        e_prev = Gd @ x_prev - b_eff
        e_curr = Gd @ x_k - b_eff
        exact_prev = float(e_prev @ e_prev)
        exact_curr = float(e_curr @ e_curr)
        objective = res_true ** 2
    elif cfg.variant == "hybrid":
        h_curr += lam * float(y_k @ y_k)
        h_prev += lam * float(pad @ pad)
        if cfg.sketched:
            thr = _clamped_threshold([_sigma_extremes(sk1.apply_matrix(Q1))])
            src = "sketch"
        else:
            thr = _safe_threshold(threshold_prop2, state.U)
            src = "U_pinv"
        rp = Ad @ x_prev - b
        rc = Ad @ x_k - b
        exact_prev = float(rp @ rp) + lam * float(pad @ pad)
        exact_curr = float(rc @ rc) + lam * float(y_k @ y_k)
        objective = exact_curr
    else:  # irw: tangent-quadratic functional anchored at x_{k-1}
        c_k = lam * majorant_offset(z_anchor, rule_k)
        if cfg.sketched:
            pen_c = sk2.apply(WLZ @ y_k)
            pen_p = sk2.apply(WLZ @ pad)
            h_curr += lam * float(pen_c @ pen_c) + c_k
            h_prev += lam * float(pen_p @ pen_p) + c_k
            thr = _clamped_threshold(
                [_sigma_extremes(sk1.apply_matrix(Q1)),
                 _sigma_extremes(sk2.apply_matrix(orthonormal_columns(WLZ)))])
            src = "sketch"
        else:
            Ut, Leff = _irw_blocks(WLZ)
            pen_c = Ut @ y_k
            pen_p = Ut @ pad
            h_curr += lam * float(pen_c @ pen_c) + c_k
            h_prev += lam * float(pen_p @ pen_p) + c_k
            thr = _pooled_threshold([_sigma_extremes(state.U),
                                     _sigma_extremes(Leff)])
            src = "block"
        # the majorant touches the smoothed objective at the anchor, so
        # sufficient decrease of the quadratic forces decrease of the
        # smoothed objective itself
        exact_prev = smoothed_objective(x_prev, Ad, b, regop, lam, rule_k)
        exact_curr = smoothed_objective(x_k, Ad, b, regop, lam, rule_k)
        objective = exact_curr
    report = report_from_threshold(h_prev, h_curr, thr, src)
    return report, h_curr, exact_prev, exact_curr, objective


# ---------------------------------------------------------------------------
# baselines


def run_gmres(cfg: SolverConfig, problem) -> SolverTrace:
    """Arnoldi with modified Gram-Schmidt; every reduction goes through
    the arithmetic context, so chopped norms can overflow at start."""
    if cfg.method != "gmres":
        raise ValueError(f"gmres driver got method {cfg.method!r}")
    A = problem.A
    _validate(cfg, A)
    ctx = _context(cfg.precision) or PASSTHROUGH
    b = np.asarray(problem.b, float)
    x_true = getattr(problem, "x_true", None)
    xt_norm = float(np.linalg.norm(x_true)) if x_true is not None else 0.0
    n = A.shape[1]
    Ad = A.to_dense()
    trace = SolverTrace("gmres", "plain")
    bnorm = _row0(trace, b, n, x_true, cfg.norms_only)

    wb = ctx.to_format(b) if ctx.rounds else b
    beta = ctx.norm2(wb)
    if not np.isfinite(beta):
        return _finish(trace, "overflow", 1)
    if beta == 0.0:
        raise ValueError("zero initial residual")
    V = [ctx.div(wb, beta) if ctx.rounds else wb / beta]
    Hcols: list = []
    scale = float(beta)
    res_prev, stag = bnorm, 0

    for k in range(1, cfg.k_max + 1):
        w = A.apply(V[-1], ctx)
        col = np.zeros(k + 1)
        for j in range(k):
            hj = ctx.dot(V[j], w)
            col[j] = hj
            w = ctx.sub(w, ctx.mul(hj, V[j]))
        hk1 = ctx.norm2(w)
        if not (np.isfinite(col).all() and np.isfinite(hk1)
                and np.isfinite(np.asarray(w)).all()):
            return _finish(trace, "overflow", k)
        col[k] = hk1
        Hcols.append(col)
        scale = max(scale, float(np.max(np.abs(col))))

        Hm = np.zeros((k + 1, k))
        for j, c in enumerate(Hcols):
            Hm[: j + 2, j] = c
        rhs = np.zeros(k + 1)
        rhs[0] = beta
        y = qr_least_squares(Hm, rhs)
        x_k = np.column_stack(V[:k]) @ y
        res_true = float(np.linalg.norm(b - Ad @ x_k))
        pr = Hm @ y - rhs
        rel = (float(np.linalg.norm(x_k - x_true)) / xt_norm
               if x_true is not None else np.nan)
        trace.rows.append(TraceRow(
            k, res_true, res_true ** 2, 0.0,
            proj_objective=float(pr @ pr), rel_error=rel,
            x=None if cfg.norms_only else x_k,
            x_norm=float(np.linalg.norm(x_k))))

        if hk1 <= BREAKDOWN_RTOL * max(1.0, scale):
            return _finish(trace, "breakdown:v", k)
        V.append(ctx.div(w, hk1) if ctx.rounds else w / hk1)
        if res_prev <= 0.0 or \
                abs(res_true - res_prev) < STAGNATION_RTOL * res_prev:
            stag += 1
            if stag >= STAGNATION_STEPS:
                return _finish(trace, "stagnation", k)
        else:
            stag = 0
        res_prev = res_true

    return _finish(trace, "completed", cfg.k_max)


def run_lsqr(cfg: SolverConfig, problem) -> SolverTrace:
    """Golub-Kahan bidiagonalization with context-routed normalizations."""
    if cfg.method != "lsqr":
        raise ValueError(f"lsqr driver got method {cfg.method!r}")
    A = problem.A
    _validate(cfg, A)
    ctx = _context(cfg.precision) or PASSTHROUGH
    b = np.asarray(problem.b, float)
    x_true = getattr(problem, "x_true", None)
    xt_norm = float(np.linalg.norm(x_true)) if x_true is not None else 0.0
    n = A.shape[1]
    Ad = A.to_dense()
    trace = SolverTrace("lsqr", "plain")
    bnorm = _row0(trace, b, n, x_true, cfg.norms_only)

    wb = ctx.to_format(b) if ctx.rounds else b
    beta1 = ctx.norm2(wb)
    if not np.isfinite(beta1):
        return _finish(trace, "overflow", 1)
    if beta1 == 0.0:
        raise ValueError("zero initial residual")
    u = ctx.div(wb, beta1) if ctx.rounds else wb / beta1
    vraw = A.apply_transpose(u, ctx)
    alpha1 = ctx.norm2(vraw)
    if not np.isfinite(alpha1):
        return _finish(trace, "overflow", 1)
    scale = max(float(beta1), float(alpha1))
    if alpha1 <= BREAKDOWN_RTOL * max(1.0, scale):
        raise ValueError("transpose application annihilates the residual")
    U = [u]
    V = [ctx.div(vraw, alpha1) if ctx.rounds else vraw / alpha1]
    alphas = [float(alpha1)]
    betas: list = []
    res_prev, stag = bnorm, 0

    for k in range(1, cfg.k_max + 1):
        if k > 1:
            vraw = ctx.sub(A.apply_transpose(U[-1], ctx),
                           ctx.mul(betas[-1], V[-1]))
            ak = ctx.norm2(vraw)
            if not (np.isfinite(ak) and np.isfinite(np.asarray(vraw)).all()):
                return _finish(trace, "overflow", k)
            if ak <= BREAKDOWN_RTOL * max(1.0, scale):
                return _finish(trace, "breakdown:v", k - 1)
            scale = max(scale, float(ak))
            alphas.append(float(ak))
            V.append(ctx.div(vraw, ak) if ctx.rounds else vraw / ak)
        uraw = ctx.sub(A.apply(V[-1], ctx), ctx.mul(alphas[-1], U[-1]))
        bk = ctx.norm2(uraw)
        if not (np.isfinite(bk) and np.isfinite(np.asarray(uraw)).all()):
            return _finish(trace, "overflow", k)
        happy = bk <= BREAKDOWN_RTOL * max(1.0, scale)
        scale = max(scale, float(bk))
        betas.append(0.0 if happy else float(bk))
        if not happy:
            U.append(ctx.div(uraw, bk) if ctx.rounds else uraw / bk)

        B = np.zeros((k + 1, k))
        for j in range(k):
            B[j, j] = alphas[j]
            B[j + 1, j] = betas[j]
        rhs = np.zeros(k + 1)
        rhs[0] = beta1
        y = qr_least_squares(B, rhs)
        x_k = np.column_stack(V[:k]) @ y
        res_true = float(np.linalg.norm(b - Ad @ x_k))
        pr = B @ y - rhs
        rel = (float(np.linalg.norm(x_k - x_true)) / xt_norm
               if x_true is not None else np.nan)
        trace.rows.append(TraceRow(
            k, res_true, res_true ** 2, 0.0,
            proj_objective=float(pr @ pr), rel_error=rel,
            x=None if cfg.norms_only else x_k,
            x_norm=float(np.linalg.norm(x_k))))

        if happy:
            return _finish(trace, "breakdown:u", k)
        if res_prev <= 0.0 or \
                abs(res_true - res_prev) < STAGNATION_RTOL * res_prev:
            stag += 1
            if stag >= STAGNATION_STEPS:
                return _finish(trace, "stagnation", k)
        else:
            stag = 0
        res_prev = res_true

    return _finish(trace, "completed", cfg.k_max)


_DRIVERS = {"fcmrh": run_fcmrh, "cmrh": run_fcmrh,
            "flslu": run_flslu, "lslu": run_flslu,
            "gmres": run_gmres, "lsqr": run_lsqr}


def run_solver(cfg: SolverConfig, problem) -> SolverTrace:
    """Dispatch on cfg.method."""
    if cfg.method not in _DRIVERS:
        raise ValueError(f"unknown method {cfg.method!r}")
    return _DRIVERS[cfg.method](cfg, problem)
