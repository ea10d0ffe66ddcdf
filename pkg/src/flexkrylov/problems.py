"""Synthetic test problems: blur and tomography operators, sparse and
piecewise-constant signals, and seeded additive noise.

All generators are deterministic given their seed arguments, and every
operator passes the randomized adjoint consistency check.  Sizes default
to desk scale so that dense oracles stay cheap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import LinearOperator, MatrixOperator


@dataclass
class TestProblem:
    """Operator, clean and noisy data, and the signal that produced them."""

    A: LinearOperator
    b_exact: np.ndarray
    b: np.ndarray
    x_true: np.ndarray
    noise_level: float
    name: str = ""


# ---------------------------------------------------------------------------
# operators


def _gaussian_taps(sigma: float):
    radius = int(math.floor(4.0 * sigma))
    d = np.arange(-radius, radius + 1)
    w = np.exp(-0.5 * (d / sigma) ** 2)
    return d, w / w.sum()


def gaussian_blur_1d(n: int, sigma: float = 2.0,
                     boundary: str = "zero") -> MatrixOperator:
    """Dense n x n convolution with a normalized Gaussian kernel.

    The kernel is truncated at 4 sigma; taps falling outside the domain
    are dropped (zero boundary), so edge rows sum to less than one while
    interior rows sum to one exactly.
    """
    if n < 8:
        raise ValueError("n must be at least 8")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if boundary != "zero":
        raise ValueError("only zero boundary conditions are supported")
    offsets, w = _gaussian_taps(sigma)
    A = np.zeros((n, n))
    for d, wd in zip(offsets, w):
        idx = np.arange(max(0, -d), min(n, n - d))
        A[idx, idx + d] = wd
    return MatrixOperator(A)


class SeparableBlur2D(LinearOperator):
    """2D Gaussian blur applied as row and column passes of a 1D blur.

    The 1D factor is symmetric, so the operator is self-adjoint.  The
    dense Kronecker form backs serialization and rounded application.
    """

    def __init__(self, side: int, sigma: float):
        self.side = int(side)
        self.sigma = float(sigma)
        self.K = gaussian_blur_1d(side, sigma).matrix
        self._dense = None
        super().__init__((self.side ** 2, self.side ** 2))

    def _blur(self, x):
        X = x.reshape(self.side, self.side)
        return (self.K @ X @ self.K.T).ravel()

    def _apply(self, x):
        return self._blur(x)

    def _apply_transpose(self, x):
        return self._blur(x)

    def to_dense(self) -> np.ndarray:
        if self._dense is None:
            # row-major vec: vec(K X K^T) = kron(K, K) vec(X)
            self._dense = np.kron(self.K, self.K)
        return self._dense

    def _apply_rounded(self, x, ctx):
        return ctx.matvec(self.to_dense(), x)

    def _apply_transpose_rounded(self, x, ctx):
        return ctx.matvec(self.to_dense(), x)


def gaussian_blur_2d(side: int, sigma: float = 1.5) -> SeparableBlur2D:
    if side < 8:
        raise ValueError("side must be at least 8")
    return SeparableBlur2D(side, sigma)


def ct_geometry(n_rays: int, n_angles: int):
    """Projection angles (degrees) and detector offsets of the scanner.

    Angles are uniform over [1, 180] degrees; offsets span [-1, 1], the
    half-width of the imaging square, so every ray meets the domain at
    every angle.
    """
    angles = np.linspace(1.0, 180.0, n_angles)
    offsets = np.linspace(-1.0, 1.0, n_rays)
    return angles, offsets


def _clip_to_square(px, py, dx, dy):
    """Parameter range of {p + s d} inside [-1, 1]^2 (empty if s1 <= s0)."""
    s0, s1 = -1e300, 1e300
    for p, dv in ((px, dx), (py, dy)):
        if dv == 0.0:
            if not -1.0 <= p <= 1.0:
                return 0.0, 0.0
        else:
            a = (-1.0 - p) / dv
            b = (1.0 - p) / dv
            if a > b:
                a, b = b, a
            s0, s1 = max(s0, a), min(s1, b)
    return s0, s1


def parallel_beam_ct(side: int, n_rays: int = 45,
                     n_angles: int = 18) -> MatrixOperator:
    """Parallel-beam tomography matrix with exact intersection lengths.

    The image occupies [-1, 1]^2 split into side x side pixels, pixel
    (i, j) covering x in [-1 + j h, -1 + (j+1) h) and y likewise with i,
    vectorized row-major as i * side + j.  Each matrix entry is the
    length of the ray segment crossing that pixel, found by walking the
    sorted grid-line crossings of the ray.
    """
    h = 2.0 / side
    angles, offsets = ct_geometry(n_rays, n_angles)
    grid = -1.0 + h * np.arange(side + 1)
    A = np.zeros((n_rays * n_angles, side * side))
    row = 0
    for theta in angles:
        phi = math.radians(theta)
        dx, dy = math.cos(phi), math.sin(phi)
        # snap axis-aligned directions exactly; fp residue in sin(pi)
        # would otherwise clip rays that run along a domain edge
        if abs(dx) < 1e-12:
            dx = 0.0
        if abs(dy) < 1e-12:
            dy = 0.0
        nx, ny = -dy, dx
        for t in offsets:
            px, py = t * nx, t * ny
            s0, s1 = _clip_to_square(px, py, dx, dy)
            if s1 > s0:
                cross = [np.array([s0, s1])]
                for p, dv in ((px, dx), (py, dy)):
                    if dv != 0.0:
                        sc = (grid - p) / dv
                        cross.append(sc[(sc > s0) & (sc < s1)])
                ss = np.unique(np.concatenate(cross))
                mids = 0.5 * (ss[1:] + ss[:-1])
                lens = ss[1:] - ss[:-1]
                j = np.clip(np.floor((px + mids * dx + 1.0) / h), 0, side - 1)
                i = np.clip(np.floor((py + mids * dy + 1.0) / h), 0, side - 1)
                flat = (i * side + j).astype(np.intp)
                np.add.at(A[row], flat, lens)
            row += 1
    return MatrixOperator(A)


# ---------------------------------------------------------------------------
# signals


def spectra_signal(n: int, seed: int = 0) -> np.ndarray:
    """Sparse nonnegative signal: a few narrow peaks on a zero background."""
    if n < 64:
        raise ValueError("n must be at least 64")
    rng = np.random.default_rng(seed)
    n_peaks = min(8, max(3, n // 32))
    margin = max(2, n // 16)
    pos = rng.choice(np.arange(margin, n - margin), size=n_peaks, replace=False)
    heights = rng.uniform(7.0, 13.0, n_peaks)
    x = np.zeros(n)
    for p, hgt in zip(pos, heights):
        x[p - 1] = 0.45 * hgt
        x[p] = hgt
        x[p + 1] = 0.55 * hgt
    return x


def piecewise_signal(n: int) -> np.ndarray:
    """Piecewise-constant signal with six plateaus (five jumps)."""
    if n < 16:
        raise ValueError("n must be at least 16")
    breaks = [0.0, 0.14, 0.35, 0.5, 0.68, 0.86, 1.0]
    values = [0.5, 2.0, 1.0, 3.0, 1.5, 2.5]
    x = np.empty(n)
    for lo, hi, v in zip(breaks[:-1], breaks[1:], values):
        x[int(lo * n):int(hi * n)] = v
    return x


def sparse_image(side: int, seed: int = 0) -> np.ndarray:
    """Vectorized side x side image of isolated bright point sources."""
    if side < 16:
        raise ValueError("side must be at least 16")
    rng = np.random.default_rng(seed)
    npix = side * side
    k = max(4, npix // 100)
    pos = rng.choice(npix, size=k, replace=False)
    x = np.zeros(npix)
    x[pos] = rng.uniform(0.5, 1.0, k)
    return x


def add_noise(b_exact: np.ndarray, level: float, seed: int) -> np.ndarray:
    """Add Gaussian noise scaled to an exact relative 2-norm level."""
    if level < 0:
        raise ValueError("noise level must be nonnegative")
    if level == 0:
        return b_exact.copy()
    rng = np.random.default_rng(seed)
    e = rng.standard_normal(b_exact.shape)
    e *= level * np.linalg.norm(b_exact) / np.linalg.norm(e)
    return b_exact + e


# ---------------------------------------------------------------------------
# composed problems


def build_problem(name: str, noise_level=None, side: int = 32,
                  n: int = 256, seed: int = 0) -> TestProblem:
    """Named desk-scale problem: operator, true signal and noisy data.

    Names: ``spectra`` (1D deblurring of a sparse spectrum), ``piecewise``
    or ``deblur1d`` (1D deblurring of a piecewise-constant signal),
    ``deblur2d`` (point sources under separable blur), ``ct``
    (parallel-beam tomography of point sources).
    """
    key = name.lower()
    if key == "deblur1d":
        key = "piecewise"
    if key == "spectra":
        A = gaussian_blur_1d(n, 2.0)
        x = spectra_signal(n, seed=seed)
        level = 0.01 if noise_level is None else noise_level
    elif key in ("piecewise", "deblur1d"):
        A = gaussian_blur_1d(n, 2.0)
        x = piecewise_signal(n)
        level = 0.01 if noise_level is None else noise_level
    elif key == "deblur2d":
        A = gaussian_blur_2d(side, 1.5)
        x = sparse_image(side, seed=seed)
        level = 0.01 if noise_level is None else noise_level
    elif key == "ct":
        A = parallel_beam_ct(side, 45, 18)
        x = sparse_image(side, seed=seed)
        level = 0.1 if noise_level is None else noise_level
    else:
        raise ValueError(f"unknown problem {name!r}")
    b_exact = A.apply(x)
    b = add_noise(b_exact, level, seed=seed + 1)
    return TestProblem(A=A, b_exact=b_exact, b=b, x_true=x,
                       noise_level=level, name=key)


# ---------------------------------------------------------------------------
# text serialization


def save_matrix_text(path, M) -> None:
    """Write a dense matrix: header line `rows cols`, then row-major
    whitespace-separated entries, one matrix row per line."""
    M = np.asarray(M, float)
    with open(path, "w") as f:
        f.write(f"{M.shape[0]} {M.shape[1]}\n")
        for row in M:
            f.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_matrix_text(path) -> np.ndarray:
    with open(path) as f:
        rows, cols = map(int, f.readline().split())
        M = np.loadtxt(f, ndmin=2)
    if M.shape != (rows, cols):
        M = M.reshape(rows, cols)
    return M


def save_vector_text(path, v) -> None:
    """Write a vector, one value per line."""
    with open(path, "w") as f:
        for x in np.asarray(v, float).ravel():
            f.write(repr(float(x)) + "\n")


def load_vector_text(path) -> np.ndarray:
    return np.loadtxt(path, ndmin=1)
