"""Operation counters for auditing solver kernels.

The basis-construction kernels in this package must never form an inner
product, and each iteration is allowed exactly one application of the
operator (plus one of its transpose for the generalized process).  The
counters here make those budgets measurable: every operator application
and every algorithmic dot product routed through :mod:`flexkrylov.linalg`
or an arithmetic context increments them.

Counts are thread local so concurrent read-only solves do not race.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field


@dataclass
class OpCounts:
    """Tallies of the audited operations."""

    dot_products: int = 0
    matvec: int = 0
    matvec_transpose: int = 0

    def snapshot(self) -> "OpCounts":
        return OpCounts(self.dot_products, self.matvec, self.matvec_transpose)

    def delta(self, earlier: "OpCounts") -> "OpCounts":
        return OpCounts(
            self.dot_products - earlier.dot_products,
            self.matvec - earlier.matvec,
            self.matvec_transpose - earlier.matvec_transpose,
        )


class _State(threading.local):
    def __init__(self):
        self.counts = OpCounts()


_state = _State()


def counts() -> OpCounts:
    """Current thread's counters (live object, not a copy)."""
    return _state.counts


def record_dot(n: int = 1) -> None:
    _state.counts.dot_products += n


def record_matvec(transpose: bool = False) -> None:
    if transpose:
        _state.counts.matvec_transpose += 1
    else:
        _state.counts.matvec += 1


@contextmanager
def counting():
    """Zeroed counter scope.

    Yields a fresh :class:`OpCounts` that accumulates only the operations
    performed inside the block; the enclosing tallies are restored on exit
    with the inner counts added.
    """
    outer = _state.counts
    inner = OpCounts()
    _state.counts = inner
    try:
        yield inner
    finally:
        outer.dot_products += inner.dot_products
        outer.matvec += inner.matvec
        outer.matvec_transpose += inner.matvec_transpose
        _state.counts = outer
