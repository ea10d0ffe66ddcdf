"""Rounding kernels and arithmetic contexts.

The rounding oracle here is independent of the implementation: exact
rational arithmetic (fractions.Fraction) locates the nearest
representable value, ties to even, with no floating-point steps.
"""

import math
import struct
import subprocess
import sys
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from flexkrylov import instrument, linalg
from flexkrylov import lowprec as lp
from flexkrylov.lowprec import FP16, Q43, ChopFormat, chop


def oracle_chop(x, fmt):
    """Correctly rounded value of x in fmt, via exact rational arithmetic."""
    if x == 0.0 or not math.isfinite(x):
        return x
    a = Fraction(abs(x))
    # floor(log2(a)) without floats
    e = a.numerator.bit_length() - a.denominator.bit_length()
    if Fraction(2) ** e > a:
        e -= 1
    assert Fraction(2) ** e <= a < Fraction(2) ** (e + 1)
    if fmt.subnormals:
        q = max(e, fmt.emin) - fmt.significand_bits
    else:
        q = e - fmt.significand_bits if e >= fmt.emin else fmt.emin
    step = Fraction(2) ** q
    n = a / step
    k = n.numerator // n.denominator
    rem = n - k
    if rem > Fraction(1, 2) or (rem == Fraction(1, 2) and k % 2 == 1):
        k += 1
    r = k * step
    if r > Fraction(fmt.xmax):
        return math.copysign(math.inf, x)
    return math.copysign(float(r), x)


def bits(x):
    return struct.pack("<d", float(x))


ALL_BACKENDS = lp.available_backends()


# ---------------------------------------------------------------------------
# chop: pinned values


def test_chop_half_fp16_exact():
    assert chop(0.5, FP16) == 0.5


def test_chop_overflow_q43():
    assert chop(1.0e6, Q43) == math.inf
    assert chop(-1.0e6, Q43) == -math.inf


def test_chop_q43_overflow_boundary():
    # ulp is 16 in [128, 256); 248 ties between 240 and 256, even wins
    assert chop(241.0, Q43) == 240.0
    assert chop(247.9, Q43) == 240.0
    assert chop(248.0, Q43) == math.inf
    assert chop(240.0, Q43) == 240.0


def test_chop_tenth_fp16():
    assert chop(0.1, FP16) == 0.0999755859375


def test_chop_special_values_pass_through():
    for fmt in (FP16, Q43):
        assert chop(0.0, fmt) == 0.0
        assert bits(chop(-0.0, fmt)) == bits(-0.0)
        assert chop(math.inf, fmt) == math.inf
        assert chop(-math.inf, fmt) == -math.inf
        assert math.isnan(chop(math.nan, fmt))


def test_chop_subnormals():
    tiny = Q43.smallest_subnormal
    assert tiny == 2.0 ** -9
    assert chop(0.6 * tiny, Q43) == tiny
    assert chop(0.4 * tiny, Q43) == 0.0
    assert chop(0.5 * tiny, Q43) == 0.0  # tie, zero is even
    nosub = ChopFormat(4, 3, subnormals=False)
    assert chop(0.6 * 2.0 ** nosub.emin, nosub) == 2.0 ** nosub.emin
    assert chop(0.5 * 2.0 ** nosub.emin, nosub) == 0.0
    assert chop(tiny, nosub) == 0.0


# ---------------------------------------------------------------------------
# chop: against the rational oracle


@pytest.mark.parametrize("backend", ALL_BACKENDS)
@pytest.mark.parametrize("fmt", [FP16, Q43, ChopFormat(3, 2),
                                 ChopFormat(8, 23), ChopFormat(4, 3, subnormals=False)])
def test_chop_matches_rational_oracle(backend, fmt):
    rng = np.random.default_rng(7)
    vals = np.concatenate([
        rng.standard_normal(200),
        rng.standard_normal(50) * fmt.xmax,
        rng.standard_normal(50) * fmt.xmin_normal,
        rng.standard_normal(50) * fmt.smallest_subnormal,
        [fmt.xmax, -fmt.xmax, fmt.xmax * (1 + 2.0 ** -(fmt.significand_bits + 1))],
    ])
    for v in vals:
        got = chop(float(v), fmt, backend=backend)
        want = oracle_chop(float(v), fmt)
        assert bits(got) == bits(want), (v, got, want)


@pytest.mark.parametrize("fmt", [FP16, Q43])
def test_chop_array_matches_scalar(fmt):
    rng = np.random.default_rng(11)
    v = rng.standard_normal(257) * 100.0
    v[0], v[1], v[2] = 0.0, math.inf, math.nan
    out = chop(v, fmt)
    assert out.shape == v.shape
    for i in range(v.size):
        want = chop(float(v[i]), fmt)
        assert bits(out[i]) == bits(want) or (math.isnan(out[i]) and math.isnan(want))


def test_backends_agree_bitwise():
    if "compiled" not in ALL_BACKENDS:
        pytest.skip("compiled backend not built")
    rng = np.random.default_rng(3)
    v = np.concatenate([rng.standard_normal(500) * 10.0 ** rng.integers(-9, 9, 500),
                        [0.0, -0.0, math.inf, -math.inf, math.nan]])
    for fmt in (FP16, Q43, ChopFormat(5, 10, subnormals=False)):
        a = chop(v, fmt, backend="compiled")
        b = chop(v, fmt, backend="numpy")
        assert a.tobytes() == b.tobytes()
        x, y = rng.standard_normal(313), rng.standard_normal(313)
        assert bits(lp.get_backend("compiled").dot_chopped(x, y, *fmt._args())) == \
               bits(lp.get_backend("numpy").dot_chopped(x, y, *fmt._args()))
        A = rng.standard_normal((17, 13))
        xa = rng.standard_normal(13)
        ma = lp.get_backend("compiled").matvec_chopped(A, xa, *fmt._args())
        mb = lp.get_backend("numpy").matvec_chopped(A, xa, *fmt._args())
        assert ma.tobytes() == mb.tobytes()


# ---------------------------------------------------------------------------
# chop: invariants

finite_floats = st.floats(allow_nan=False, allow_infinity=False, width=64)


@given(finite_floats)
def test_chop_idempotent(x):
    for fmt in (FP16, Q43):
        once = chop(x, fmt)
        assert bits(chop(once, fmt)) == bits(once)


@given(finite_floats, finite_floats)
def test_chop_monotone(x, y):
    if x > y:
        x, y = y, x
    for fmt in (FP16, Q43):
        assert chop(x, fmt) <= chop(y, fmt)


@given(finite_floats)
def test_chop_odd(x):
    for fmt in (FP16, Q43):
        assert bits(chop(-x, fmt)) == bits(-chop(x, fmt))


def _all_finite_values(fmt):
    vals = [0.0]
    for k in range(1, 2 ** fmt.significand_bits):
        vals.append(k * fmt.smallest_subnormal)  # subnormals
    for ew in range(fmt.emin, fmt.bias + 1):
        for m in range(2 ** fmt.significand_bits, 2 ** (fmt.significand_bits + 1)):
            vals.append(math.ldexp(m, ew - fmt.significand_bits))
    return vals


def test_chop_fixed_points_exhaustive_q43():
    vals = _all_finite_values(Q43)
    assert max(vals) == 240.0 and len(vals) == 1 + 7 + 14 * 8
    for v in vals:
        assert chop(v, Q43) == v
        assert chop(-v, Q43) == -v


def test_chop_fp16_fixed_points_sampled():
    vals = _all_finite_values(FP16)
    assert max(vals) == 65504.0
    for v in vals[:: 97]:
        assert chop(v, FP16) == v


# ---------------------------------------------------------------------------
# contexts


def test_passthrough_is_bitwise_plain_fp64():
    rng = np.random.default_rng(5)
    A = rng.standard_normal((40, 30))
    x = rng.standard_normal(30)
    ctx = lp.passthrough_context()
    assert ctx.rounds is False
    assert ctx.matvec(A, x).tobytes() == (A @ x).tobytes()
    assert bits(ctx.dot(x, x)) == bits(float(np.dot(x, x)))
    assert bits(ctx.add(0.1, 0.2)) == bits(0.1 + 0.2)
    assert bits(ctx.sqrt(2.0)) == bits(math.sqrt(2.0))
    assert ctx.to_format(x) is x


def test_chopped_ones_dot_overflows_q43():
    # fp64 would give 1000.0; every partial sum is rounded, and the
    # pairwise fold reaches 128 + 128 -> 256 > 240
    ctx = lp.chopped_kernel_context(Q43)
    ones = np.ones(1000)
    assert ctx.dot(ones, ones) == math.inf


def test_chopped_dot_pairwise_vs_serial_witness():
    # serial accumulation would stall at 16 (16 + 1 rounds back to 16);
    # the pairwise fold keeps balanced partial sums and reaches 20
    ctx = lp.chopped_kernel_context(Q43)
    ones = np.ones(20)
    assert ctx.dot(ones, ones) == 20.0
    acc = 0.0
    for _ in range(20):
        acc = chop(acc + 1.0, Q43)
    assert acc == 16.0


def test_chopped_matvec_sequential_column_order():
    # accumulation order is ascending column index, one rounding per step:
    # 16 + 1 -> 16 twice, although the exact row sum 18 is representable
    ctx = lp.chopped_kernel_context(Q43)
    A = np.array([[1.0, 1.0, 1.0]])
    x = np.array([16.0, 1.0, 1.0])
    assert ctx.matvec(A, x)[0] == 16.0
    assert chop(18.0, Q43) == 18.0


def test_chopped_context_ops():
    ctx = lp.chopped_kernel_context(Q43)
    assert ctx.rounds is True
    assert ctx.fmt == Q43
    assert ctx.add(16.0, 1.0) == 16.0
    assert ctx.sub(1.0, 0.0625) == 0.9375  # 15/16 representable
    assert ctx.mul(3.0, 3.0) == 9.0
    assert ctx.div(1.0, 3.0) == 0.34375  # 11/32
    arr = np.array([0.3, 100.0])
    out = ctx.to_format(arr)
    assert out[0] == chop(0.3, Q43) and out[1] == chop(100.0, Q43)


def test_chopped_dot_is_counted_and_max_magnitude_is_not():
    ctx = lp.chopped_kernel_context(Q43)
    v = np.array([3.0, -1.0e9, 7.0])
    with instrument.counting() as c:
        m = linalg.norm_inf(v)
        assert m == 1.0e9  # comparison search, exact, no overflow
        assert c.dot_products == 0
        ctx.dot(v[:1], v[:1])
        assert c.dot_products == 1


def test_chopped_sqrt_chops_result():
    ctx = lp.chopped_kernel_context(Q43)
    # sqrt(2) = 1.41421...; q43 grid step in [1, 2) is 0.125 -> 1.375
    assert ctx.sqrt(2.0) == 1.375


def test_norm2_chopped():
    ctx = lp.chopped_kernel_context(Q43)
    v = np.array([3.0, 4.0])
    # products 9 and 16 are representable; 9 + 16 = 25 ties between the
    # grid points 24 and 26, even mantissa wins: 24.  sqrt(24) = 4.899
    # lands on the half-unit grid of [4, 8) at 5.0
    assert ctx.norm2(v) == 5.0


# ---------------------------------------------------------------------------
# format and parsing


def test_chopformat_validation():
    with pytest.raises(ValueError):
        ChopFormat(1, 10)
    with pytest.raises(ValueError):
        ChopFormat(12, 10)
    with pytest.raises(ValueError):
        ChopFormat(5, 0)
    with pytest.raises(ValueError):
        ChopFormat(5, 53)
    with pytest.raises(ValueError):
        ChopFormat(5, 10, rounding="stochastic")


def test_chopformat_derived_quantities():
    assert FP16.bias == 15 and FP16.emin == -14
    assert FP16.xmax == 65504.0
    assert FP16.smallest_subnormal == 2.0 ** -24
    assert Q43.bias == 7 and Q43.emin == -6
    assert Q43.xmax == 240.0
    assert Q43.xmin_normal == 2.0 ** -6


def test_parse_precision():
    assert lp.parse_precision("fp64") is lp.PASSTHROUGH
    assert lp.parse_precision("fp16").fmt == FP16
    assert lp.parse_precision("q43").fmt == Q43
    custom = lp.parse_precision("custom:4,3")
    assert custom.fmt == Q43
    assert custom.rounds is True
    for bad in ("fp32", "custom:4", "custom:a,b", ""):
        with pytest.raises(ValueError):
            lp.parse_precision(bad)


def test_env_var_disables_extension():
    code = ("import flexkrylov.lowprec as lp; "
            "print(','.join(lp.available_backends()))")
    out = subprocess.run([sys.executable, "-c", code],
                         env={"PATH": "/usr/bin:/bin", "FLEXKRYLOV_NO_EXT": "1"},
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
