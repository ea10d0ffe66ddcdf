"""Objective evaluation, quadratic-majorant checks, and the sufficient
monotonicity conditions.

The monotonicity machinery revolves around one comparison principle:
when two nonnegative functions h and H are equivalent within constants
(k2 * h <= H <= k1 * h), a drop in the computable h forces an actual
drop in the exact H as soon as the relative drop (h_prev - h_curr) /
h_curr clears k1/k2 - 1.  The thresholds below produce that constant
for each solver family from singular-value extremes of basis
pseudoinverses or sketches.  The conditions are sufficient, never
necessary: a failed check says nothing.

Everything here is an observer: evaluations use dense operator forms
directly so recorded operator/dot budgets of the solver loop stay
untouched, and they always run in plain float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import pinv_small, svd_small
from .precond import (
    RegOperator,
    WeightRule,
    majorant_offset,
    smoothed_objective,
    weights,
)
from .sketch import Sketch


@dataclass
class MonotonicityReport:
    """Outcome of one sufficient-decrease check."""

    ratio: float
    threshold: float
    condition_met: bool
    kappa_source: str
    trivial: bool = False


def check_lemma1(h_prev: float, h_curr: float, k1: float, k2: float,
                 source: str = "block") -> MonotonicityReport:
    """Sufficient decrease: (h_prev - h_curr)/h_curr >= k1/k2 - 1."""
    if not k1 >= k2 > 0:
        raise ValueError("equivalence constants need k1 >= k2 > 0")
    if h_prev < 0 or h_curr < 0:
        raise ValueError("h values are squared norms, must be nonnegative")
    threshold = k1 / k2 - 1.0
    if h_curr == 0.0:
        return MonotonicityReport(np.inf, threshold, True, source,
                                  trivial=True)
    ratio = (h_prev - h_curr) / h_curr
    return MonotonicityReport(ratio, threshold, ratio >= threshold, source)


def report_from_threshold(h_prev: float, h_curr: float, threshold: float,
                          source: str) -> MonotonicityReport:
    """Same check when the constant ratio k1/k2 - 1 is already known."""
    return check_lemma1(h_prev, h_curr, threshold + 1.0, 1.0, source)


def _guard_nonsingular(B):
    B = np.atleast_2d(np.asarray(B, float))
    s = svd_small(B)
    if s.size == 0 or s[-1] <= max(B.shape) * np.finfo(float).eps * s[0]:
        raise ValueError("basis is numerically singular")
    return B


def _pinv_extremes(B):
    sp = svd_small(pinv_small(_guard_nonsingular(B)))
    return sp[0], sp[-1]


def threshold_prop1(U) -> float:
    """kappa^2 - 1 of the basis pseudoinverse: quasi-residual vs residual."""
    smax, smin = _pinv_extremes(U)
    return (smax / smin) ** 2 - 1.0


def threshold_prop2(U) -> float:
    """Hybrid variant: the identity penalty block contributes sigma = 1,
    so the extremes are clamped against 1 on both sides."""
    smax, smin = _pinv_extremes(U)
    return max(smax ** 2, 1.0) / min(smin ** 2, 1.0) - 1.0


def threshold_prop3(U, U_lu) -> float:
    """Reweighted variant: sigma-extremes pooled over both pseudoinverses."""
    a_max, a_min = _pinv_extremes(U)
    b_max, b_min = _pinv_extremes(U_lu)
    smax = max(a_max, b_max)
    smin = min(a_min, b_min)
    return (smax / smin) ** 2 - 1.0


def threshold_sketch(sk: Sketch, basis=None, restricted: bool = True) -> float:
    """kappa^2 - 1 of the sketch, restricted to a span or over the full space.

    The restricted variant needs an orthonormal basis of the span being
    sketched.  Restricting to a smaller span can only shrink the
    singular-value interval, so nested spans give nested thresholds and
    the full-space variant is the loosest of all: finite (the row-scale
    ratio) only for full sampling, infinite once rows are dropped,
    because a strict subsample annihilates part of the space.
    """
    if not restricted:
        if sk.s < sk.source_dim:
            return np.inf
        smax = float(np.max(sk.scales))
        smin = float(np.min(sk.scales))
        return (smax / smin) ** 2 - 1.0
    if basis is None:
        raise ValueError("restricted threshold needs the span basis")
    Q = np.atleast_2d(np.asarray(basis, float))
    if Q.shape[1] == 0:
        return 0.0
    gram_gap = np.linalg.norm(Q.T @ Q - np.eye(Q.shape[1]))
    if gram_gap > 1e-8:
        raise ValueError("span basis must be orthonormal")
    s = svd_small(sk.apply_matrix(Q))
    if s[-1] <= 0.0:
        raise ValueError("sketch annihilates part of the span")
    return (s[0] / s[-1]) ** 2 - 1.0


# ---------------------------------------------------------------------------
# objectives and the tangent quadratic model


def _dense(A):
    return A.to_dense() if hasattr(A, "to_dense") else np.asarray(A, float)


def eval_objective(x, A, b, rule: WeightRule, regop: RegOperator,
                   lam: float) -> float:
    """||A x - b||^2 + lam * ||W(Lx) Lx||^2 with weights at z = Lx."""
    x = np.asarray(x, float)
    r = _dense(A) @ x - np.asarray(b, float)
    z = regop.apply(x)
    wz = weights(rule, z) * z
    return float(r @ r) + lam * float(wz @ wz)


@dataclass
class MajorantModel:
    """Tangent quadratic model of the smoothed objective at an anchor.

    The constant is chosen so the model touches the objective exactly at
    the anchor; concavity of u -> (u + tau^2)^{p/2} makes it dominate
    everywhere else.
    """

    W_diag: np.ndarray
    lam: float
    anchor: np.ndarray
    c: float
    A_dense: np.ndarray
    b: np.ndarray
    regop: RegOperator
    rule: WeightRule

    def value(self, x) -> float:
        x = np.asarray(x, float)
        r = self.A_dense @ x - self.b
        wlx = self.W_diag * self.regop.apply(x)
        return float(r @ r) + self.lam * float(wlx @ wlx) + self.c

    def objective(self, x) -> float:
        return smoothed_objective(x, self.A_dense, self.b, self.regop,
                                  self.lam, self.rule)


def build_majorant(A, b, regop: RegOperator, rule: WeightRule, lam: float,
                   anchor) -> MajorantModel:
    anchor = np.asarray(anchor, float)
    z_bar = regop.apply(anchor)
    model = MajorantModel(
        W_diag=weights(rule, z_bar),
        lam=float(lam),
        anchor=anchor,
        c=float(lam) * majorant_offset(z_bar, rule),
        A_dense=_dense(A),
        b=np.asarray(b, float),
        regop=regop,
        rule=rule,
    )
    f0 = model.objective(anchor)
    q0 = model.value(anchor)
    if abs(q0 - f0) > 1e-10 * max(1.0, abs(f0)):
        raise AssertionError("majorant fails to touch the objective at "
                             "its own anchor")
    return model


def _fd_gradient(f, x, h: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def verify_majorant(model: MajorantModel, f_eval=None, samples: int = 50,
                    seed: int = 0, h: float = 1e-6) -> bool:
    """Anchoring, gradient tangency, and domination, all checked numerically.

    ``f_eval`` defaults to the model's own smoothed objective; passing a
    different function (for instance the objective with weights from a
    wrong anchor) makes this a negative control.
    """
    if model.rule.tau <= 0:
        raise ValueError("smoothing tau must be positive")
    if f_eval is None:
        f_eval = model.objective
    xbar = model.anchor
    f0 = f_eval(xbar)
    if abs(model.value(xbar) - f0) > 1e-10 * max(1.0, abs(f0)):
        return False
    gf = _fd_gradient(f_eval, xbar, h)
    gq = _fd_gradient(model.value, xbar, h)
    if np.linalg.norm(gq - gf) > 1e-4 * max(1.0, np.linalg.norm(gf)):
        return False
    rng = np.random.default_rng(seed)
    scale = 1.0 + float(np.linalg.norm(xbar))
    for _ in range(int(samples)):
        x = xbar + rng.normal(size=xbar.shape) * scale * rng.uniform(0.01, 2.0)
        if model.value(x) < f_eval(x) - 1e-10 * max(1.0, abs(f_eval(x))):
            return False
    return True
