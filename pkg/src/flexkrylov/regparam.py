"""Regularization-parameter selection on the projected problem.

All rules work on the small design matrix through its SVD, so candidate
weights cost O(k) each after one O(k^3) factorization: the residual,
solution norm, and trace of the influence matrix are all rational
functions of the filter factors sigma^2/(sigma^2 + lambda).

The search domain is log10(lambda) in [-12, 4] throughout: wide enough
to span machine-precision regularization to heavy damping for problems
normalized to unit scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import svd_full

LOG_LAMBDA_RANGE = (-12.0, 4.0)
GRID_POINTS = 200


@dataclass(frozen=True)
class ParamRule:
    """Which rule picks lambda each iteration, plus its inputs."""

    kind: str
    fixed_value: float = 0.0
    noise_level: float = None
    omega: str = "one"
    x_true: np.ndarray = None

    def __post_init__(self):
        kinds = {"fixed", "discrepancy", "gcv", "wgcv", "optimal"}
        if self.kind not in kinds:
            raise ValueError(f"unknown rule {self.kind!r}")
        if self.kind == "fixed" and self.fixed_value < 0:
            raise ValueError("fixed lambda must be nonnegative")
        if self.kind == "discrepancy":
            if self.noise_level is None or not 0 < self.noise_level < 1:
                raise ValueError("discrepancy needs noise level in (0,1)")
        if self.kind == "optimal" and self.x_true is None:
            raise ValueError("the oracle rule needs the true solution")
        if self.omega not in ("one", "lslu"):
            raise ValueError(f"unknown omega schedule {self.omega!r}")


def lambda_grid(points: int = GRID_POINTS) -> np.ndarray:
    lo, hi = LOG_LAMBDA_RANGE
    return np.logspace(lo, hi, points)


class FilteredProblem:
    """SVD view of a projected problem for fast lambda sweeps."""

    def __init__(self, M, rhs):
        M = np.atleast_2d(np.asarray(M, float))
        rhs = np.asarray(rhs, float).ravel()
        self.rows, self.cols = M.shape
        U, s, _ = svd_full(M)
        coeff = U.T @ rhs
        tol = max(M.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
        active = s > tol
        self.s = s[active]
        self.c = coeff[active]
        fit = U[:, active] @ self.c
        resid = rhs - fit
        self.perp_sq = float(resid @ resid)

    def residual_sq(self, lam: float) -> float:
        f = lam / (self.s ** 2 + lam) if lam > 0 else np.zeros_like(self.s)
        return float(np.sum((f * self.c) ** 2)) + self.perp_sq

    def solution_norm_sq(self, lam: float) -> float:
        g = self.s / (self.s ** 2 + lam)
        return float(np.sum((g * self.c) ** 2))

    def influence_trace(self, lam: float) -> float:
        """trace(M M_lambda^dagger) = sum of filter factors."""
        return float(np.sum(self.s ** 2 / (self.s ** 2 + lam)))


def wgcv_objective(fp: FilteredProblem, lam: float, omega: float) -> float:
    """k * ||(M M_lam^+ - I) rhs||^2 / trace(I - omega M M_lam^+)^2."""
    num = fp.cols * fp.residual_sq(lam)
    den = fp.rows - omega * fp.influence_trace(lam)
    return num / den ** 2


def _golden_min(f, t_lo, t_hi, iters: int = 100, tol: float = 1e-9) -> float:
    """Golden-section minimum of f over [t_lo, t_hi]."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = float(t_lo), float(t_hi)
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(iters):
        if b - a < tol:
            break
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = f(x2)
    return 0.5 * (a + b)


def select_discrepancy(pp, b_norm: float, tau_nl: float, info: dict = None):
    """lambda with ||M y(lam) - rhs||^2 = (tau_nl * b_norm)^2, by bisection.

    The squared residual is nondecreasing in lambda, so the crossing is
    bracketed on the log10 domain when it exists; otherwise the nearer
    boundary is returned and flagged through ``info``.
    """
    if not 0.0 < tau_nl < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    if b_norm <= 0.0:
        raise ValueError("need a positive data norm")
    fp = pp if isinstance(pp, FilteredProblem) else FilteredProblem(pp.M, pp.rhs)
    target = (tau_nl * b_norm) ** 2
    lo, hi = LOG_LAMBDA_RANGE

    def f(t):
        return fp.residual_sq(10.0 ** t) - target

    if f(lo) > 0.0:
        if info is not None:
            info["flag"] = "boundary-low"
        return 10.0 ** lo
    if f(hi) < 0.0:
        if info is not None:
            info["flag"] = "boundary-high"
        return 10.0 ** hi
    a, b = lo, hi
    while b - a > 1e-6:
        mid = 0.5 * (a + b)
        if f(mid) <= 0.0:
            a = mid
        else:
            b = mid
    if info is not None:
        info["flag"] = "ok"
    return 10.0 ** (0.5 * (a + b))


def select_wgcv(pp, omega: float, info: dict = None):
    """Grid scan plus golden-section refinement of the weighted GCV curve."""
    if not 0.0 < omega <= 1.0:
        raise ValueError("omega must lie in (0, 1]")
    fp = pp if isinstance(pp, FilteredProblem) else FilteredProblem(pp.M, pp.rhs)
    grid = lambda_grid()
    vals = np.array([wgcv_objective(fp, lam, omega) for lam in grid])
    if vals.max() - vals.min() < 1e-12 * max(1.0, abs(vals.max())):
        if info is not None:
            info["flag"] = "flat"
        return grid[len(grid) // 2]
    i = int(np.argmin(vals))
    t_lo = np.log10(grid[max(i - 1, 0)])
    t_hi = np.log10(grid[min(i + 1, len(grid) - 1)])
    t_best = _golden_min(lambda t: wgcv_objective(fp, 10.0 ** t, omega),
                         t_lo, t_hi)
    if info is not None:
        info["flag"] = "ok"
    return 10.0 ** t_best


def select_gcv(pp, info: dict = None):
    return select_wgcv(pp, 1.0, info)


def select_optimal(lams, x_builder, x_true, refine: bool = False):
    """argmin over candidate lambdas of the true-solution error."""
    x_true = np.asarray(x_true, float)
    lams = list(lams)
    errs = [float(np.linalg.norm(np.asarray(x_builder(lam), float) - x_true))
            for lam in lams]
    i = int(np.argmin(errs))
    best = lams[i]
    if not refine or i == 0 or i == len(lams) - 1:
        return best
    if lams[i - 1] <= 0.0 or lams[i + 1] <= 0.0:
        return best
    t = _golden_min(
        lambda t: float(np.linalg.norm(
            np.asarray(x_builder(10.0 ** t), float) - x_true)),
        np.log10(lams[i - 1]), np.log10(lams[i + 1]))
    cand = 10.0 ** t
    if float(np.linalg.norm(np.asarray(x_builder(cand), float) - x_true)) \
            <= errs[i]:
        return cand
    return best


def omega_schedule(kind: str, k: int, m: int) -> float:
    """Weight for the WGCV denominator at outer iteration k."""
    if k < 1:
        raise ValueError("iterations are counted from 1")
    if kind == "one":
        return 1.0
    if kind == "lslu":
        return (k + 1) / m
    raise ValueError(f"unknown omega schedule {kind!r}")
