"""Row-subsampling sketches for restricted least-squares problems.

Subsampling is the one sketch family that survives an inner-product-free
setting: applying it is a gather plus a diagonal scaling, with no long
accumulations.  Rows are drawn without replacement, uniformly or
proportionally to supplied scores, and each kept row i is scaled by
1/sqrt(s * q_i) so that squared sketched norms are unbiased under
uniform sampling.  Full sampling degenerates to a permutation, for which
sketched and unsketched least-squares problems coincide exactly; that
degenerate case doubles as a correctness oracle throughout the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import orthonormal_columns


@dataclass
class Sketch:
    """Sampled-row sketch: (S r)_j = scales[j] * r[indices[j]]."""

    s: int
    source_dim: int
    indices: np.ndarray
    scales: np.ndarray
    epsilon_estimate: float = field(default=None)

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=int)
        self.scales = np.asarray(self.scales, dtype=float)
        if self.indices.shape != (self.s,) or self.scales.shape != (self.s,):
            raise ValueError("indices and scales must both have length s")
        if len(np.unique(self.indices)) != self.s:
            raise ValueError("sampled row indices must be distinct")
        if np.any(self.scales <= 0):
            raise ValueError("row scales must be positive")

    def apply(self, r) -> np.ndarray:
        r = np.asarray(r, float)
        return self.scales * r[self.indices]

    def apply_matrix(self, M) -> np.ndarray:
        M = np.asarray(M, float)
        return self.scales[:, None] * M[self.indices, :]

    def matrix(self) -> np.ndarray:
        S = np.zeros((self.s, self.source_dim))
        S[np.arange(self.s), self.indices] = self.scales
        return S


def build_subsampling_sketch(rows: int, s: int, scores=None,
                             seed: int = 0) -> Sketch:
    """Draw s of `rows` indices without replacement, p proportional to scores."""
    rows = int(rows)
    s = int(s)
    if not 1 <= s <= rows:
        raise ValueError(f"sketch size {s} outside 1..{rows}")
    if scores is None:
        probs = np.full(rows, 1.0 / rows)
    else:
        scores = np.asarray(scores, float)
        if scores.shape != (rows,):
            raise ValueError("scores must have one entry per row")
        if np.any(scores < 0) or not np.all(np.isfinite(scores)):
            raise ValueError("scores must be finite and nonnegative")
        total = float(scores.sum())
        if total <= 0:
            raise ValueError("scores must not all vanish")
        probs = scores / total
    rng = np.random.default_rng(seed)
    idx = rng.choice(rows, size=s, replace=False, p=probs)
    # zero-probability rows cannot be drawn, so probs[idx] > 0
    scales = 1.0 / np.sqrt(s * probs[idx])
    return Sketch(s=s, source_dim=rows, indices=idx, scales=scales)


def approximate_leverage_scores(M, block_size: int = 256) -> np.ndarray:
    """Row importance scores: squared row norms of an orthonormal basis.

    They sum to the numerical rank, and identical rows get identical
    scores (each score depends only on the row's position relative to the
    row space).  Rows are processed in blocks so only the basis itself
    needs to be held whole.
    """
    M = np.asarray(M, float)
    Q = orthonormal_columns(M)
    lev = np.empty(Q.shape[0])
    for lo in range(0, Q.shape[0], block_size):
        blk = Q[lo:lo + block_size]
        lev[lo:lo + blk.shape[0]] = np.sum(blk * blk, axis=1)
    return lev


def estimate_distortion(sk: Sketch, basis, trials: int = 50,
                        seed: int = 0) -> float:
    """Worst observed |  ||S r|| / ||r||  - 1 | over random r in span(basis).

    Stored on the sketch as ``epsilon_estimate`` and returned.  This is a
    sampled lower bound on the true subspace distortion, which is what
    the monotonicity thresholds consume.
    """
    Q = orthonormal_columns(basis)
    if Q.shape[1] == 0:
        sk.epsilon_estimate = 0.0
        return 0.0
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(int(trials)):
        r = Q @ rng.normal(size=Q.shape[1])
        nr = float(np.linalg.norm(r))
        if nr == 0.0:
            continue
        sr = float(np.linalg.norm(sk.apply(r)))
        worst = max(worst, abs(sr / nr - 1.0))
    sk.epsilon_estimate = worst
    return worst
