"""Simulated reduced-precision floating-point arithmetic.

Values live in fp64 throughout; :func:`chop` rounds a value to the
nearest member of a small binary format (round to nearest, ties to
even, subnormals supported, overflow to infinity).  Solvers take an
:class:`ArithmeticContext` and route their scalar work through it, so a
single code path serves both the plain fp64 runs and the simulated
low-precision runs.  Contexts are immutable and shareable; concurrent
runs with different formats simply thread different contexts.

Two interchangeable backends implement the kernels: a compiled
extension and a numpy fallback, selected at import.  They agree
bitwise; ``FLEXKRYLOV_NO_EXT=1`` in the environment forces the
fallback.

Reduction orders are part of the contract, since rounding makes
addition non-associative:

* ``dot`` rounds each product, then folds pairwise (neighbours summed
  level by level, odd leftover carried up unchanged).
* ``matvec`` accumulates column by column, one rounding per add and per
  multiply.

Pivot-magnitude comparisons in the basis-construction kernels are exact
(comparisons do not round); only arithmetic results are chopped.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .. import instrument
from . import _chopfallback

try:  # pragma: no cover - exercised implicitly at import
    if os.environ.get("FLEXKRYLOV_NO_EXT"):
        _chopext = None
    else:
        from . import _chopext
except ImportError:  # pragma: no cover
    _chopext = None

__all__ = [
    "ChopFormat",
    "FP16",
    "Q43",
    "chop",
    "ArithmeticContext",
    "ChoppedContext",
    "PASSTHROUGH",
    "chopped_kernel_context",
    "passthrough_context",
    "parse_precision",
    "default_backend",
    "available_backends",
    "get_backend",
]


@dataclass(frozen=True)
class ChopFormat:
    """A binary floating-point format small enough to simulate in fp64.

    ``significand_bits`` counts stored fraction bits (the leading bit is
    implicit), so fp16 is ``ChopFormat(5, 10)``.
    """

    exponent_bits: int
    significand_bits: int
    rounding: str = "nearest-even"
    subnormals: bool = True

    def __post_init__(self):
        if not (2 <= self.exponent_bits <= 11):
            raise ValueError("exponent_bits must be in [2, 11] to be "
                             "simulatable in fp64")
        if not (1 <= self.significand_bits <= 52):
            raise ValueError("significand_bits must be in [1, 52]")
        if self.rounding != "nearest-even":
            raise ValueError("only round-to-nearest-even is supported")

    @property
    def bias(self) -> int:
        return 2 ** (self.exponent_bits - 1) - 1

    @property
    def emin(self) -> int:
        return 1 - self.bias

    @property
    def xmax(self) -> float:
        return (2.0 - 2.0 ** (-self.significand_bits)) * 2.0 ** self.bias

    @property
    def xmin_normal(self) -> float:
        return 2.0 ** self.emin

    @property
    def smallest_subnormal(self) -> float:
        return 2.0 ** (self.emin - self.significand_bits)

    def _args(self):
        return (self.emin, self.significand_bits, self.xmax, self.subnormals)


FP16 = ChopFormat(5, 10)
Q43 = ChopFormat(4, 3)


# ---------------------------------------------------------------------------
# backend selection


def available_backends():
    names = ["numpy"]
    if _chopext is not None:
        names.insert(0, "compiled")
    return names


def default_backend() -> str:
    return "compiled" if _chopext is not None else "numpy"


def get_backend(name=None):
    """Backend module by name ('compiled', 'numpy' or None for default)."""
    if name in (None, "auto"):
        return _chopext if _chopext is not None else _chopfallback
    if name == "numpy":
        return _chopfallback
    if name == "compiled":
        if _chopext is None:
            raise RuntimeError("compiled rounding kernels are not available")
        return _chopext
    raise ValueError(f"unknown backend {name!r}")


def chop(x, fmt: ChopFormat, backend=None):
    """Round a scalar or array to the nearest value representable in fmt.

    Zeros, infinities and NaNs pass through; finite magnitudes that
    round above the format maximum become signed infinity.
    """
    b = get_backend(backend)
    if isinstance(x, np.ndarray):
        return b.chop_array(x, *fmt._args())
    return b.chop_scalar(float(x), *fmt._args())


# ---------------------------------------------------------------------------
# arithmetic contexts


class ArithmeticContext:
    """Plain fp64 semantics.  Base class and passthrough in one.

    The passthrough context performs exactly the operations an
    uninstrumented kernel would, so running a solver with it is bitwise
    identical to running without any context at all.
    """

    rounds = False
    fmt = None

    def to_format(self, x):
        return x

    def add(self, x, y):
        return x + y

    def sub(self, x, y):
        return x - y

    def mul(self, x, y):
        return x * y

    def div(self, x, y):
        return x / y

    def sqrt(self, x):
        if isinstance(x, np.ndarray):
            return np.sqrt(x)
        return math.sqrt(x)

    def matvec(self, A, x):
        return A @ x

    def dot(self, x, y) -> float:
        instrument.record_dot()
        return float(np.dot(x, y))

    def norm2(self, x) -> float:
        return self.sqrt(self.dot(x, x))


PASSTHROUGH = ArithmeticContext()


def passthrough_context() -> ArithmeticContext:
    return PASSTHROUGH


class ChoppedContext(ArithmeticContext):
    """Every arithmetic result rounded to ``fmt``.

    Operands are assumed to be in format already (results of earlier
    context operations, or data passed through :meth:`to_format` once on
    entry); each operation performs the fp64 computation and rounds the
    result once.
    """

    rounds = True

    def __init__(self, fmt: ChopFormat, backend=None):
        self.fmt = fmt
        self.backend_name = ("compiled" if get_backend(backend) is _chopext
                             else "numpy")
        self._b = get_backend(backend)
        self._fa = fmt._args()

    def _round(self, v):
        if isinstance(v, np.ndarray):
            return self._b.chop_array(v, *self._fa)
        return self._b.chop_scalar(float(v), *self._fa)

    def to_format(self, x):
        return self._round(x)

    def add(self, x, y):
        return self._round(x + y)

    def sub(self, x, y):
        return self._round(x - y)

    def mul(self, x, y):
        return self._round(x * y)

    def div(self, x, y):
        return self._round(x / y)

    def sqrt(self, x):
        if isinstance(x, np.ndarray):
            return self._round(np.sqrt(x))
        return self._round(math.sqrt(x) if x >= 0 else float("nan"))

    def matvec(self, A, x):
        return self._b.matvec_chopped(A, x, *self._fa)

    def dot(self, x, y) -> float:
        instrument.record_dot()
        return self._b.dot_chopped(np.asarray(x, float), np.asarray(y, float),
                                   *self._fa)


def chopped_kernel_context(fmt: ChopFormat, backend=None) -> ChoppedContext:
    """Context whose add/sub/mul/div each round their result through chop."""
    return ChoppedContext(fmt, backend=backend)


def parse_precision(text: str):
    """CLI precision spec to a context.

    ``fp64`` gives the passthrough context; ``fp16`` and ``q43`` the two
    predefined formats; ``custom:E,S`` builds ``ChopFormat(E, S)``.
    """
    t = text.strip().lower()
    if t == "fp64":
        return PASSTHROUGH
    if t == "fp16":
        return ChoppedContext(FP16)
    if t == "q43":
        return ChoppedContext(Q43)
    if t.startswith("custom:"):
        body = t[len("custom:"):]
        parts = body.split(",")
        if len(parts) != 2:
            raise ValueError("custom precision must look like custom:E,S")
        try:
            e, s = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise ValueError("custom precision must look like custom:E,S") from exc
        return ChoppedContext(ChopFormat(e, s))
    raise ValueError(f"unknown precision {text!r}")
