"""Small per-iteration least-squares problems and their penalized variants.

Each outer iteration reduces to a dense problem of size (k+1) x k (or
sketch-size x k): minimize ||M y - rhs||^2, optionally plus
lambda * ||P y||^2 for a penalty block P that is the identity (Tikhonov
on the coordinates), the triangular factor of a pivoted LU of the
weighted penalty image (iteratively reweighted runs), or a sketched
penalty block.  The canonical solution path is a QR factorization of
the stacked matrix [M; sqrt(lambda) P]; normal equations appear only as
an independent oracle in the tests.

These are bookkeeping-scale solves and always run in plain float64:
simulated low precision lives in the n-dimensional solver arithmetic,
not in the k x k corrections.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import lu_partial_pivot, norm_inf, qr_least_squares


@dataclass
class ProjectedProblem:
    """Design matrix, right-hand side, optional penalty block, weight."""

    M: np.ndarray
    rhs: np.ndarray
    penalty: np.ndarray = None
    lam: float = 0.0

    def __post_init__(self):
        self.M = np.atleast_2d(np.asarray(self.M, float))
        self.rhs = np.asarray(self.rhs, float).ravel()
        if self.rhs.shape[0] != self.M.shape[0]:
            raise ValueError("rhs length must match the design row count")
        if self.penalty is not None:
            self.penalty = np.atleast_2d(np.asarray(self.penalty, float))
            if self.penalty.shape[1] != self.M.shape[1]:
                raise ValueError("penalty column count must match the design")
        self.lam = float(self.lam)
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")


def solve_penalized(pp: ProjectedProblem) -> np.ndarray:
    """Stacked-QR solve of the general penalized problem."""
    if pp.lam == 0.0 or pp.penalty is None or pp.penalty.shape[0] == 0:
        return qr_least_squares(pp.M, pp.rhs)
    aug = np.vstack([pp.M, np.sqrt(pp.lam) * pp.penalty])
    rhs = np.concatenate([pp.rhs, np.zeros(pp.penalty.shape[0])])
    return qr_least_squares(aug, rhs)


def solve_plain(pp: ProjectedProblem) -> np.ndarray:
    """Pure least squares; rank deficiency yields the minimum-norm y."""
    if pp.lam != 0.0:
        raise ValueError("plain solve requires lambda = 0")
    if pp.penalty is not None:
        raise ValueError("plain solve takes no penalty block")
    return qr_least_squares(pp.M, pp.rhs)


def solve_hybrid(pp: ProjectedProblem) -> np.ndarray:
    """Tikhonov on the subspace coordinates: penalty is the identity."""
    k = pp.M.shape[1]
    if pp.penalty is not None and not np.array_equal(pp.penalty, np.eye(k)):
        raise ValueError("hybrid solve penalizes the coordinates themselves")
    if pp.lam == 0.0:
        return qr_least_squares(pp.M, pp.rhs)
    return solve_penalized(ProjectedProblem(pp.M, pp.rhs, np.eye(k), pp.lam))


def irw_penalty_factor(WLZ) -> np.ndarray:
    """Triangular stand-in for the weighted penalty image.

    The upper-triangular factor of a row-pivoted LU of W L Z plays the
    role a QR triangle would, without any inner products.  Numerically
    rank-deficient input leaves near-zero pivot rows; those are dropped
    so the penalty has full row content.
    """
    WLZ = np.atleast_2d(np.asarray(WLZ, float))
    if WLZ.shape[0] < WLZ.shape[1]:
        raise ValueError("penalty image must have at least k rows")
    _, _, Ufac = lu_partial_pivot(WLZ)
    tol = 1e-14 * max(norm_inf(WLZ), 1e-300)
    keep = [i for i in range(Ufac.shape[0]) if norm_inf(Ufac[i]) > tol]
    return Ufac[keep, :]


def solve_irw(pp: ProjectedProblem, WLZ=None) -> np.ndarray:
    """Reweighted variant: triangular penalty from the LU of W L Z."""
    penalty = pp.penalty
    if penalty is None:
        if WLZ is None:
            raise ValueError("need either a penalty factor or W L Z")
        penalty = irw_penalty_factor(WLZ)
    if pp.lam == 0.0:
        return qr_least_squares(pp.M, pp.rhs)
    return solve_penalized(ProjectedProblem(pp.M, pp.rhs, penalty, pp.lam))


def solve_sketched(pp: ProjectedProblem, variant: str) -> np.ndarray:
    """Sketched analogue: M = S1 A Z, rhs = S1 b, irw penalty = S2 W L Z."""
    if variant == "plain":
        if pp.lam != 0.0 or pp.penalty is not None:
            raise ValueError("plain variant has no regularization")
        return qr_least_squares(pp.M, pp.rhs)
    if variant == "hybrid":
        return solve_hybrid(pp)
    if variant == "irw":
        if pp.penalty is None:
            raise ValueError("irw variant needs the sketched penalty block")
        return solve_penalized(pp)
    raise ValueError(f"unknown variant {variant!r}")


def projected_objective(pp: ProjectedProblem, y) -> float:
    """||M y - rhs||^2 + lambda ||P y||^2, evaluated in plain float64."""
    y = np.asarray(y, float)
    r = pp.M @ y - pp.rhs
    val = float(r @ r)
    if pp.lam > 0.0 and pp.penalty is not None and pp.penalty.shape[0] > 0:
        q = pp.penalty @ y
        val += pp.lam * float(q @ q)
    return val
