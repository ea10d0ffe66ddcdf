"""Timing comparison of the rounding-kernel backends.

The simulated low-precision arithmetic has two interchangeable
implementations: a compiled extension and a pure-numpy fallback.  This
script times both on the hot kernels (elementwise rounding, pairwise
chopped sum, chopped dot, chopped matvec), checks they agree bitwise,
and prints the speedup.  Run it from the repository root:

    python3 benchmarks/bench_chop.py [--sizes 256,1024,4096] [--repeat 20]
"""

import argparse
import time

import numpy as np

from flexkrylov.lowprec import FP16, Q43, available_backends, get_backend


def _time(fn, repeat: int) -> float:
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench(sizes, repeat: int) -> None:
    backends = available_backends()
    if "compiled" not in backends:
        print("compiled backend unavailable; timing the fallback only")
    mods = {name: get_backend(name) for name in backends}
    rng = np.random.default_rng(0)
    for fmt_name, fmt in (("fp16", FP16), ("q43", Q43)):
        args = fmt._args()
        print(f"\nformat {fmt_name}")
        header = f"{'kernel':<12}{'n':>8}" + "".join(
            f"{name:>14}" for name in backends) + ("" if len(backends) < 2
                                                   else f"{'speedup':>10}")
        print(header)
        for n in sizes:
            x = rng.normal(size=n)
            y = rng.normal(size=n)
            A = rng.normal(size=(max(64, n // 16), n))
            cases = [
                ("chop_array", lambda m: m.chop_array(x, *args)),
                ("sum", lambda m: m.sum_chopped(x, *args)),
                ("dot", lambda m: m.dot_chopped(x, y, *args)),
                ("matvec", lambda m: m.matvec_chopped(A, x, *args)),
            ]
            for kname, call in cases:
                outs = {b: np.asarray(call(m)) for b, m in mods.items()}
                vals = list(outs.values())
                for other in vals[1:]:
                    if not np.array_equal(vals[0], other):
                        raise SystemExit(
                            f"backend mismatch in {kname} at n={n}")
                times = {b: _time(lambda m=m: call(m), repeat)
                         for b, m in mods.items()}
                row = f"{kname:<12}{n:>8}" + "".join(
                    f"{times[b] * 1e6:>12.1f}us" for b in backends)
                if len(backends) == 2:
                    row += f"{times['numpy'] / times['compiled']:>9.1f}x"
                print(row)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="256,1024,4096")
    ap.add_argument("--repeat", type=int, default=20)
    ns = ap.parse_args()
    sizes = [int(s) for s in ns.sizes.split(",") if s]
    bench(sizes, ns.repeat)


if __name__ == "__main__":
    main()
