import numpy as np
import pytest

from flexkrylov.diagnostics import (
    MajorantModel,
    build_majorant,
    check_lemma1,
    eval_objective,
    report_from_threshold,
    threshold_prop1,
    threshold_prop2,
    threshold_prop3,
    threshold_sketch,
    verify_majorant,
)
from flexkrylov.precond import (
    WeightRule,
    d1_operator,
    identity_operator,
    weights,
)
from flexkrylov.sketch import build_subsampling_sketch


def random_orthonormal(rng, m, k):
    return np.linalg.qr(rng.normal(size=(m, k)))[0]


# ---------------------------------------------------------------------------
# sufficient-decrease comparison


def test_lemma1_zero_threshold_accepts_any_nonincrease():
    r = check_lemma1(1.0, 1.0, 2.0, 2.0)
    assert r.threshold == 0.0 and r.condition_met
    assert not check_lemma1(1.0, 1.000001, 2.0, 2.0).condition_met


def test_lemma1_hand_cases():
    # ratio 2 against threshold 3: insufficient
    r = check_lemma1(3.0, 1.0, 4.0, 1.0)
    assert r.ratio == 2.0 and r.threshold == 3.0 and not r.condition_met
    # ratio exactly 3: boundary counts as met
    r = check_lemma1(4.0, 1.0, 4.0, 1.0)
    assert r.ratio == 3.0 and r.condition_met


def test_lemma1_zero_current_value_trivially_met():
    r = check_lemma1(0.5, 0.0, 4.0, 1.0)
    assert r.condition_met and r.trivial and r.ratio == np.inf


def test_lemma1_validation():
    with pytest.raises(ValueError):
        check_lemma1(1.0, 1.0, 1.0, 2.0)
    with pytest.raises(ValueError):
        check_lemma1(1.0, 1.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        check_lemma1(-1.0, 1.0, 2.0, 1.0)


def test_report_from_threshold_matches_lemma1():
    a = report_from_threshold(4.0, 1.0, 3.0, "U_pinv")
    b = check_lemma1(4.0, 1.0, 4.0, 1.0, "U_pinv")
    assert (a.ratio, a.threshold, a.condition_met) == \
        (b.ratio, b.threshold, b.condition_met)
    assert a.kappa_source == "U_pinv"


# ---------------------------------------------------------------------------
# thresholds


def test_prop1_orthonormal_is_zero():
    rng = np.random.default_rng(0)
    U = random_orthonormal(rng, 8, 4)
    assert threshold_prop1(U) == pytest.approx(0.0, abs=1e-10)


def test_prop1_diagonal_hand_value():
    U = np.array([[2.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    assert threshold_prop1(U) == pytest.approx(3.0, rel=1e-12)


def test_prop1_nonnegative_and_singular_guard():
    rng = np.random.default_rng(1)
    for seed in range(5):
        U = np.random.default_rng(seed).normal(size=(7, 3))
        assert threshold_prop1(U) >= -1e-14
    bad = rng.normal(size=(6, 3))
    bad[:, 2] = bad[:, 0]
    with pytest.raises(ValueError):
        threshold_prop1(bad)


def test_prop2_clamps():
    # sigma(U+) = (1/2, 1/4): numerator clamps to 1, denominator 1/16
    assert threshold_prop2(np.diag([2.0, 4.0])) == pytest.approx(15.0,
                                                                 rel=1e-12)
    # sigma(U+) = (5, 2): numerator 25, denominator clamps to 1
    assert threshold_prop2(np.diag([0.2, 0.5])) == pytest.approx(24.0,
                                                                 rel=1e-12)
    rng = np.random.default_rng(2)
    U = random_orthonormal(rng, 6, 3)
    assert threshold_prop2(U) == pytest.approx(0.0, abs=1e-10)


def test_prop3_pooled_extremes():
    a = np.array([[2.0]])
    b = np.array([[0.5]])
    assert threshold_prop3(a, b) == pytest.approx(15.0, rel=1e-12)
    assert threshold_prop3(b, a) == pytest.approx(15.0, rel=1e-12)
    rng = np.random.default_rng(3)
    q1 = random_orthonormal(rng, 7, 3)
    q2 = random_orthonormal(rng, 5, 3)
    assert threshold_prop3(q1, q2) == pytest.approx(0.0, abs=1e-10)


def test_sketch_threshold_full_sampling_zero():
    rng = np.random.default_rng(4)
    Q = random_orthonormal(rng, 20, 5)
    sk = build_subsampling_sketch(20, 20, seed=0)
    assert threshold_sketch(sk, Q) == pytest.approx(0.0, abs=1e-10)
    assert threshold_sketch(sk, restricted=False) == pytest.approx(
        0.0, abs=1e-12)


def test_sketch_threshold_empty_basis_zero():
    sk = build_subsampling_sketch(10, 4, seed=0)
    assert threshold_sketch(sk, np.zeros((10, 0))) == 0.0


def test_sketch_threshold_requires_orthonormal_basis():
    rng = np.random.default_rng(5)
    sk = build_subsampling_sketch(12, 6, seed=0)
    with pytest.raises(ValueError):
        threshold_sketch(sk, rng.normal(size=(12, 3)))
    with pytest.raises(ValueError):
        threshold_sketch(sk)


def test_sketch_threshold_interlacing_nested_spans():
    # growing the span can only widen the singular-value interval of the
    # restricted sketch, so thresholds are monotone in span nesting
    rng = np.random.default_rng(6)
    for seed in range(5):
        sk = build_subsampling_sketch(24, 12, seed=seed)
        Q = random_orthonormal(np.random.default_rng(100 + seed), 24, 6)
        small = threshold_sketch(sk, Q[:, :3])
        big = threshold_sketch(sk, Q)
        assert small <= big + 1e-10
        # a strict subsample has no finite full-space condition number
        assert threshold_sketch(sk, restricted=False) == np.inf


def test_sketch_threshold_full_sampling_interlacing():
    # nonuniform full sampling: restricted sigma-interval sits inside the
    # row-scale interval, so restricted <= unrestricted, both finite
    rng = np.random.default_rng(7)
    scores = rng.uniform(0.5, 4.0, size=16)
    sk = build_subsampling_sketch(16, 16, scores=scores, seed=1)
    Q = random_orthonormal(rng, 16, 4)
    s = np.linalg.svd(sk.apply_matrix(Q), compute_uv=False)
    assert s[0] <= np.max(sk.scales) + 1e-10
    assert s[-1] >= np.min(sk.scales) - 1e-10
    assert threshold_sketch(sk, Q) <= \
        threshold_sketch(sk, restricted=False) + 1e-10


# ---------------------------------------------------------------------------
# objective evaluation


def test_objective_lambda_zero_is_data_misfit():
    rng = np.random.default_rng(7)
    A = rng.normal(size=(6, 4))
    x = rng.normal(size=4)
    b = rng.normal(size=6)
    rule = WeightRule(p=1.0, tau=0.1)
    want = float(np.sum((A @ x - b) ** 2))
    assert eval_objective(x, A, b, rule, identity_operator(4), 0.0) == \
        pytest.approx(want, rel=1e-14)


def test_objective_p_two_is_plain_tikhonov():
    rng = np.random.default_rng(8)
    A = rng.normal(size=(5, 5))
    x = rng.normal(size=5)
    b = rng.normal(size=5)
    L = d1_operator(5)
    rule = WeightRule(p=2.0, tau=0.3)
    lam = 0.7
    z = L.apply(x)
    want = float(np.sum((A @ x - b) ** 2)) + lam * float(z @ z)
    assert eval_objective(x, A, b, rule, L, lam) == pytest.approx(
        want, rel=1e-13)


def test_objective_matches_componentwise_sum():
    rng = np.random.default_rng(9)
    A = rng.normal(size=(7, 5))
    x = rng.normal(size=5)
    b = rng.normal(size=7)
    rule = WeightRule(p=1.0, tau=0.05)
    lam = 0.4
    L = d1_operator(5)
    z = L.apply(x)
    pen = sum((zi * zi + rule.tau ** 2) ** ((rule.p - 2.0) / 2.0) * zi * zi
              for zi in z)
    want = float(np.sum((A @ x - b) ** 2)) + lam * pen
    assert eval_objective(x, A, b, rule, L, lam) == pytest.approx(
        want, rel=1e-12)


# ---------------------------------------------------------------------------
# tangent quadratic model


def make_instance(seed, n=10, p=1.0, tau=0.1, lam=0.5, op="identity"):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n + 2, n))
    b = rng.normal(size=n + 2)
    anchor = rng.normal(size=n)
    regop = identity_operator(n) if op == "identity" else d1_operator(n)
    rule = WeightRule(p=p, tau=tau)
    return A, b, regop, rule, lam, anchor


def test_majorant_anchoring_identity():
    A, b, regop, rule, lam, anchor = make_instance(0)
    m = build_majorant(A, b, regop, rule, lam, anchor)
    assert m.value(anchor) == pytest.approx(m.objective(anchor), rel=1e-12)


@pytest.mark.parametrize("p,tau", [(0.5, 1e-2), (1.0, 1e-2), (1.0, 0.1)])
@pytest.mark.parametrize("op", ["identity", "d1"])
def test_majorant_verifies(p, tau, op):
    A, b, regop, rule, lam, anchor = make_instance(1, p=p, tau=tau, op=op)
    m = build_majorant(A, b, regop, rule, lam, anchor)
    assert verify_majorant(m, samples=50, seed=2)


def test_majorant_p_two_is_the_objective_itself():
    A, b, regop, rule, lam, anchor = make_instance(3, p=2.0, tau=0.2)
    m = build_majorant(A, b, regop, rule, lam, anchor)
    rng = np.random.default_rng(4)
    for _ in range(5):
        x = rng.normal(size=anchor.size)
        assert m.value(x) == pytest.approx(m.objective(x), rel=1e-12)
    assert verify_majorant(m, samples=10)


def test_majorant_wrong_anchor_weights_fail():
    A, b, regop, rule, lam, anchor = make_instance(5)
    other = np.asarray(anchor) + 3.0
    wrong_w = weights(rule, regop.apply(other))
    good = build_majorant(A, b, regop, rule, lam, anchor)
    # same anchor value by construction of c, but wrong curvature direction
    r = A @ anchor - b
    wlx = wrong_w * regop.apply(anchor)
    quad = float(r @ r) + lam * float(wlx @ wlx)
    c = good.objective(anchor) - quad
    bad = MajorantModel(W_diag=wrong_w, lam=lam, anchor=anchor, c=c,
                        A_dense=np.asarray(A, float), b=np.asarray(b, float),
                        regop=regop, rule=rule)
    assert bad.value(anchor) == pytest.approx(bad.objective(anchor),
                                              rel=1e-10)
    assert not verify_majorant(bad, samples=50, seed=6)
