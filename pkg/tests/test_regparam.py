import numpy as np
import pytest

from flexkrylov.projected import ProjectedProblem
from flexkrylov.regparam import (
    FilteredProblem,
    ParamRule,
    lambda_grid,
    omega_schedule,
    select_discrepancy,
    select_gcv,
    select_optimal,
    select_wgcv,
    wgcv_objective,
)


def dense_quantities(M, rhs, lam):
    """Independent oracle via explicit dense solves."""
    k = M.shape[1]
    y = np.linalg.solve(M.T @ M + lam * np.eye(k), M.T @ rhs)
    r = M @ y - rhs
    infl = M @ np.linalg.solve(M.T @ M + lam * np.eye(k), M.T)
    return float(r @ r), float(y @ y), float(np.trace(infl))


@pytest.mark.parametrize("lam", [1e-8, 1e-3, 1.0, 50.0])
def test_filtered_problem_matches_dense_oracle(lam):
    rng = np.random.default_rng(0)
    M = rng.normal(size=(6, 4))
    rhs = rng.normal(size=6)
    fp = FilteredProblem(M, rhs)
    res, ysq, tr = dense_quantities(M, rhs, lam)
    assert fp.residual_sq(lam) == pytest.approx(res, rel=1e-10)
    assert fp.solution_norm_sq(lam) == pytest.approx(ysq, rel=1e-10)
    assert fp.influence_trace(lam) == pytest.approx(tr, rel=1e-10)


def test_filtered_monotonicity_over_grid():
    rng = np.random.default_rng(1)
    fp = FilteredProblem(rng.normal(size=(7, 4)), rng.normal(size=7))
    grid = lambda_grid(60)
    res = [fp.residual_sq(l) for l in grid]
    ysq = [fp.solution_norm_sq(l) for l in grid]
    assert all(b >= a - 1e-12 for a, b in zip(res, res[1:]))
    assert all(b <= a + 1e-12 for a, b in zip(ysq, ysq[1:]))


# ---------------------------------------------------------------------------
# discrepancy principle


def test_discrepancy_hand_value():
    # M = e1 column, rhs = (1,1): residual^2(lam) = (lam/(1+lam))^2 + 1.
    # target 1.5 solves lam/(1+lam) = sqrt(1/2), i.e. lam = sqrt(2)+1.
    pp = ProjectedProblem(np.array([[1.0], [0.0]]), np.array([1.0, 1.0]))
    info = {}
    lam = select_discrepancy(pp, b_norm=np.sqrt(2.0),
                             tau_nl=np.sqrt(0.75), info=info)
    assert info["flag"] == "ok"
    assert lam == pytest.approx(np.sqrt(2.0) + 1.0, rel=1e-5)


def test_discrepancy_diagonal_vs_dense_grid():
    M = np.diag([1.0, 0.1])
    rhs = np.array([1.0, 1.0])
    pp = ProjectedProblem(M, rhs)
    b_norm, tau = np.sqrt(2.0), 0.5
    lam = select_discrepancy(pp, b_norm, tau)
    # brute force the same crossing on a 10^6-point grid
    grid = np.logspace(-12, 4, 10 ** 6)
    s = np.array([1.0, 0.1])
    res = ((grid[:, None] / (s**2 + grid[:, None])) ** 2).sum(axis=1)
    target = (tau * b_norm) ** 2
    lam_grid_best = grid[np.argmin(np.abs(res - target))]
    cell = 16.0 / (10 ** 6 - 1)
    assert abs(np.log10(lam) - np.log10(lam_grid_best)) <= cell


def test_discrepancy_target_at_plain_residual_gives_tiny_lambda():
    # tau exactly at the lam -> 0 residual ratio: crossing sits at the left end
    pp = ProjectedProblem(np.array([[1.0], [0.0]]), np.array([1.0, 1.0]))
    info = {}
    lam = select_discrepancy(pp, b_norm=np.sqrt(2.0),
                             tau_nl=np.sqrt(0.5), info=info)
    assert info["flag"] in ("ok", "boundary-low")
    # the fp-rounded target sits ~4e-16 above the attainable minimum, so the
    # crossing lands a few decades up from the left end but still far below
    # any regularizing magnitude
    assert lam <= 1e-6


def test_discrepancy_boundary_low_unattainable_target():
    # target below the plain least-squares residual: flagged at the left end
    pp = ProjectedProblem(np.array([[1.0], [0.0]]), np.array([1.0, 1.0]))
    info = {}
    lam = select_discrepancy(pp, b_norm=np.sqrt(2.0), tau_nl=0.5, info=info)
    assert info["flag"] == "boundary-low"
    assert lam == 1e-12


def test_discrepancy_boundary_high_unreachable():
    pp = ProjectedProblem(np.array([[1.0], [0.0]]), np.array([1.0, 1.0]))
    info = {}
    lam = select_discrepancy(pp, b_norm=10.0, tau_nl=0.9, info=info)
    assert info["flag"] == "boundary-high"
    assert lam == 1e4


def test_discrepancy_validation():
    pp = ProjectedProblem(np.eye(2), np.ones(2))
    with pytest.raises(ValueError):
        select_discrepancy(pp, 1.0, 1.5)
    with pytest.raises(ValueError):
        select_discrepancy(pp, 0.0, 0.5)


# ---------------------------------------------------------------------------
# (weighted) generalized cross validation


def brute_wgcv(M, rhs, omega, points):
    """Independent dense-grid minimizer using the library-free formula."""
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    c = U.T @ rhs
    perp = float(rhs @ rhs - c @ c)
    grid = np.logspace(-12, 4, points)
    filt = grid[:, None] / (s**2 + grid[:, None])
    res = (filt**2 @ c**2) + perp
    tr = M.shape[0] - omega * ((s**2 / (s**2 + grid[:, None])).sum(axis=1))
    vals = M.shape[1] * res / tr**2
    return grid[np.argmin(vals)]


@pytest.mark.parametrize("omega", [1.0, 0.4])
def test_wgcv_within_one_cell_of_brute_force(omega):
    rng = np.random.default_rng(2)
    M = rng.normal(size=(3, 2))
    rhs = rng.normal(size=3)
    lam = select_wgcv(ProjectedProblem(M, rhs), omega)
    points = 10 ** 5
    best = brute_wgcv(M, rhs, omega, points)
    cell = 16.0 / (points - 1)
    assert abs(np.log10(lam) - np.log10(best)) <= cell


def test_wgcv_objective_matches_independent_formula():
    rng = np.random.default_rng(3)
    M = rng.normal(size=(6, 4))
    rhs = rng.normal(size=6)
    fp = FilteredProblem(M, rhs)
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    c = U.T @ rhs
    perp = float(rhs @ rhs - c @ c)
    for lam in [1e-6, 1e-2, 1.0, 100.0]:
        for omega in [1.0, 0.5]:
            res = float(((lam / (s**2 + lam)) ** 2) @ c**2) + perp
            tr = M.shape[0] - omega * float((s**2 / (s**2 + lam)).sum())
            want = M.shape[1] * res / tr**2
            assert wgcv_objective(fp, lam, omega) == pytest.approx(
                want, rel=1e-10)


def test_gcv_is_wgcv_with_unit_weight():
    rng = np.random.default_rng(4)
    for _ in range(10):
        M = rng.normal(size=(5, 3))
        rhs = rng.normal(size=5)
        pp = ProjectedProblem(M, rhs)
        assert select_gcv(pp) == select_wgcv(pp, 1.0)


def test_trace_term_converges_to_row_count():
    rng = np.random.default_rng(5)
    fp = FilteredProblem(rng.normal(size=(5, 3)), rng.normal(size=5))
    assert fp.rows - fp.influence_trace(1e12) == pytest.approx(5.0, rel=1e-10)


def test_wgcv_flat_curve_flagged():
    # zero rhs: objective identically zero
    fp = ProjectedProblem(np.eye(3), np.zeros(3))
    info = {}
    lam = select_wgcv(fp, 1.0, info=info)
    assert info["flag"] == "flat"
    assert lam == lambda_grid()[100]


def test_wgcv_validation():
    pp = ProjectedProblem(np.eye(2), np.ones(2))
    with pytest.raises(ValueError):
        select_wgcv(pp, 0.0)
    with pytest.raises(ValueError):
        select_wgcv(pp, 1.5)


# ---------------------------------------------------------------------------
# oracle rule and omega schedules


def test_optimal_picks_exact_candidate():
    x_true = np.array([1.0, -2.0, 0.5])

    def builder(lam):
        return x_true + (lam - 0.3) * np.ones(3)

    lam = select_optimal([0.1, 0.3, 0.9], builder, x_true)
    assert lam == 0.3


def test_optimal_refinement_improves_on_grid():
    x_true = np.zeros(2)
    t0 = -1.37

    def builder(lam):
        return (np.log10(lam) - t0) * np.array([1.0, 1.0])

    lams = list(np.logspace(-3, 1, 9))
    coarse = select_optimal(lams, builder, x_true)
    fine = select_optimal(lams, builder, x_true, refine=True)
    err = lambda l: np.linalg.norm(builder(l) - x_true)
    assert err(fine) <= err(coarse)
    assert abs(np.log10(fine) - t0) < 1e-6


def test_omega_schedule_values():
    assert omega_schedule("one", 3, 100) == 1.0
    assert omega_schedule("lslu", 9, 6516) == pytest.approx(10.0 / 6516.0)
    vals = [omega_schedule("lslu", k, 50) for k in range(1, 10)]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        omega_schedule("lslu", 0, 50)
    with pytest.raises(ValueError):
        omega_schedule("banana", 1, 50)


def test_param_rule_validation():
    ParamRule("fixed", fixed_value=0.5)
    ParamRule("discrepancy", noise_level=0.01)
    ParamRule("optimal", x_true=np.ones(3))
    with pytest.raises(ValueError):
        ParamRule("banana")
    with pytest.raises(ValueError):
        ParamRule("fixed", fixed_value=-1.0)
    with pytest.raises(ValueError):
        ParamRule("discrepancy", noise_level=2.0)
    with pytest.raises(ValueError):
        ParamRule("discrepancy")
    with pytest.raises(ValueError):
        ParamRule("optimal")
    with pytest.raises(ValueError):
        ParamRule("gcv", omega="sometimes")
