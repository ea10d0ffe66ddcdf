"""Command-line experiment runner.

Three subcommands: ``run`` writes one trace CSV per requested method
plus a summary CSV, ``compare`` writes a single iteration-aligned
relative-error CSV for external plotting, and ``selftest`` exercises
the library's invariant suites (factorization identities, degenerate
equivalence, majorant checks, sufficient-decrease assertions) plus a
negative control that corrupts the recurrence and demands the identity
check notice.

All numeric cells are written with ``repr`` of the Python float, so a
rerun with the same flags and seeds reproduces every file bitwise.
Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .diagnostics import build_majorant, verify_majorant
from .hessenberg import SeededDiagonalPlan, run_factorization
from .linalg import MatrixOperator
from .precond import WeightRule, d1_operator, identity_operator
from .problems import build_problem
from .regparam import ParamRule
from .solvers import (Prior, SketchPlan, SolverConfig, _validate, run_solver)

_FLEX = ("fcmrh", "flslu")
_BASE_PLAIN = ("gmres", "lsqr")
_ALL_METHODS = ("fcmrh", "flslu", "cmrh", "lslu", "gmres", "lsqr")
_PROBLEMS = ("deblur1d", "deblur2d", "ct", "spectra", "piecewise")


# ---------------------------------------------------------------------------
# flag parsing


def _arg_line(line: str):
    """key=value lines in an @file become --key value pairs."""
    line = line.strip()
    if not line or line.startswith("#"):
        return []
    if "=" in line:
        key, _, val = line.partition("=")
        return [f"--{key.strip()}", val.strip()]
    return [line]


class _Parser(argparse.ArgumentParser):
    def convert_arg_line_to_args(self, line):
        return _arg_line(line)


def _solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--problem", default="spectra", choices=_PROBLEMS)
    p.add_argument("--method", default="fcmrh",
                   help="comma-separated list from "
                        "{fcmrh,flslu,cmrh,lslu,gmres,lsqr}")
    p.add_argument("--variant", default=None,
                   choices=("plain", "hybrid", "irw"),
                   help="defaults to plain, or hybrid when --lambda is "
                        "given")
    p.add_argument("--prior", default="none",
                   help="none | l1 | lp:P | tv | tv:P")
    p.add_argument("--tau", default="1e-3",
                   help="weight smoothing, a number or 'auto'")
    p.add_argument("--lambda", dest="lam", default=None,
                   help="fixed:VAL, a bare number, or dp|gcv|wgcv|opt")
    p.add_argument("--kmax", type=int, default=20)
    p.add_argument("--sketch", default="none", choices=("none", "subsample"))
    p.add_argument("--sketch-size", type=int, default=0)
    p.add_argument("--sketch-seed", type=int, default=None)
    p.add_argument("--precision", default="fp64")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pinv", default="exact", choices=("exact", "approx"))
    p.add_argument("--out", default=".")


def _build_parser() -> _Parser:
    parser = _Parser(prog="flexkrylov", fromfile_prefix_chars="@",
                     description="inner-product-free Krylov experiment "
                                 "runner")
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", fromfile_prefix_chars="@",
                           help="write per-method trace CSVs and a summary")
    _solver_flags(run_p)
    cmp_p = sub.add_parser("compare", fromfile_prefix_chars="@",
                           help="write one aligned relative-error CSV")
    _solver_flags(cmp_p)
    sub.add_parser("selftest", help="run the invariant suites")
    return parser


def _parse_methods(text: str) -> list:
    methods = [m.strip() for m in text.split(",") if m.strip()]
    if not methods:
        raise ValueError("no methods given")
    for m in methods:
        if m not in _ALL_METHODS:
            raise ValueError(f"unknown method {m!r}")
    return methods


def _parse_prior_spec(text: str):
    """'none' -> None, else (operator kind, exponent p)."""
    if text == "none":
        return None
    name, _, pval = text.partition(":")
    if name == "l1":
        p = 1.0
    elif name in ("lp", "tv"):
        p = float(pval) if pval else 1.0
    else:
        raise ValueError(f"unknown prior {text!r}")
    if name == "tv":
        return ("d1", p)
    return ("identity", p)


def _parse_lambda_spec(text):
    """None, or (rule kind, fixed value)."""
    if text is None:
        return None
    if text == "dp":
        return ("discrepancy", 0.0)
    if text == "gcv":
        return ("gcv", 0.0)
    if text == "wgcv":
        return ("wgcv", 0.0)
    if text == "opt":
        return ("optimal", 0.0)
    if text.startswith("fixed:"):
        return ("fixed", float(text[len("fixed:"):]))
    return ("fixed", float(text))


def _make_rule(lam_spec, problem):
    if lam_spec is None:
        return None
    kind, value = lam_spec
    if kind == "fixed":
        return ParamRule("fixed", fixed_value=value)
    if kind == "discrepancy":
        return ParamRule("discrepancy", noise_level=problem.noise_level)
    if kind == "optimal":
        return ParamRule("optimal", x_true=problem.x_true)
    return ParamRule(kind)


def _config_for(method: str, args, problem, strict: bool) -> SolverConfig:
    """Materialize one method's config from the shared flags.

    In strict mode the flags are taken literally.  In compare mode
    (strict=False) fields a method's family cannot carry are dropped to
    that family's plain defaults, so one flag set can drive a mixed
    method list.
    """
    prior_spec = _parse_prior_spec(args.prior)
    lam_spec = _parse_lambda_spec(args.lam)
    variant = args.variant
    if variant is None:
        variant = "plain" if lam_spec is None else "hybrid"
    sketched = args.sketch != "none"
    if not strict:
        if method in _BASE_PLAIN:
            prior_spec, lam_spec, variant, sketched = None, None, "plain", \
                False
        elif method not in _FLEX:
            prior_spec = None
            if variant == "irw":
                variant, lam_spec = "plain", None
    prior = None
    if prior_spec is not None:
        kind, p = prior_spec
        n = problem.A.shape[1]
        regop = d1_operator(n) if kind == "d1" else identity_operator(n)
        auto = args.tau == "auto"
        tau = 1e-3 if auto else float(args.tau)
        prior = Prior(WeightRule(p, tau), regop, auto_tau=auto)
    sketch = None
    if sketched:
        sk_seed = args.seed if args.sketch_seed is None else args.sketch_seed
        sketch = SketchPlan(s1=args.sketch_size, s2=args.sketch_size,
                            seed=sk_seed)
    return SolverConfig(method=method, variant=variant, sketched=sketched,
                        prior=prior, param_rule=_make_rule(lam_spec, problem),
                        k_max=args.kmax, precision=args.precision,
                        seed=args.seed, sketch=sketch, pinv=args.pinv)


# ---------------------------------------------------------------------------
# CSV output


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return "" if np.isnan(f) else repr(f)
    return str(v)


def _write_csv(path: Path, header: list, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def _trace_rows(trace) -> list:
    out = []
    for r in trace.rows:
        if r.report is None:
            ratio, thr, met = None, None, None
        else:
            ratio, thr, met = r.report.ratio, r.report.threshold, \
                bool(r.report.condition_met)
        out.append([r.it, r.res_norm, r.objective, r.lam, ratio, thr, met])
    return out


def _write_trace(outdir: Path, method: str, trace) -> Path:
    path = outdir / f"trace_{method}.csv"
    _write_csv(path, ["iter", "res_norm", "objective", "lambda", "ratio",
                      "threshold", "condition_met"], _trace_rows(trace))
    return path


def _summary_row(method: str, trace) -> list:
    errs = trace.rel_errors
    if np.isnan(errs).all():
        best_err, best_it = None, None
    else:
        i = int(np.nanargmin(errs))
        best_err, best_it = float(errs[i]), trace.rows[i].it
    return [method, best_err, best_it, trace.rows[-1].lam, trace.halt_reason]


# ---------------------------------------------------------------------------
# subcommands


def cmd_run(args) -> int:
    try:
        methods = _parse_methods(args.method)
        problem = build_problem(args.problem, seed=args.seed)
        configs = [_config_for(m, args, problem, strict=True)
                   for m in methods]
        for cfg in configs:
            _validate(cfg, problem.A)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    summary = []
    try:
        for method, cfg in zip(methods, configs):
            trace = run_solver(cfg, problem)
            path = _write_trace(outdir, method, trace)
            print(f"wrote {path}")
            summary.append(_summary_row(method, trace))
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    _write_csv(outdir / "summary.csv",
               ["method", "min_rel_error", "min_iteration", "final_lambda",
                "halt_reason"], summary)
    print(f"wrote {outdir / 'summary.csv'}")
    return 0


def cmd_compare(args) -> int:
    try:
        methods = _parse_methods(args.method)
        problem = build_problem(args.problem, seed=args.seed)
        configs = [_config_for(m, args, problem, strict=False)
                   for m in methods]
        for cfg in configs:
            _validate(cfg, problem.A)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    try:
        traces = [run_solver(cfg, problem) for cfg in configs]
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    depth = max(len(t) for t in traces)
    rows = []
    for it in range(depth):
        row = [it]
        for t in traces:
            row.append(t.rows[it].rel_error if it < len(t) else None)
        rows.append(row)
    path = outdir / "compare.csv"
    _write_csv(path, ["iter"] + methods, rows)
    print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# selftest suites


def _check_factorizations():
    """Identity residuals and pivoted unit-lower structure, both kinds."""
    for seed in range(5):
        rng = np.random.default_rng(seed)
        for shape in ((30, 30), (30, 20)):
            Ad = rng.normal(size=shape)
            b = rng.normal(size=shape[0])
            st = run_factorization(MatrixOperator(Ad), b, k_max=10,
                                   plan=SeededDiagonalPlan(shape[1], seed))
            Z, U, H = st.Z, st.U, st.H
            scale = max(1.0, np.linalg.norm(Ad) * np.linalg.norm(Z))
            if np.linalg.norm(Ad @ Z - U @ H) > 1e-10 * scale:
                return False, f"image identity failed (seed {seed})"
            P = U[st.q[: U.shape[1]]]
            if np.max(np.abs(np.triu(P, 1))) > 1e-12 or \
                    np.max(np.abs(np.diag(P) - 1.0)) > 1e-12:
                return False, f"pivoted basis not unit lower (seed {seed})"
            if st.kind == "generalized":
                V, T = st.V, st.T
                scale_t = max(1.0, np.linalg.norm(Ad) * np.linalg.norm(U))
                if np.linalg.norm(Ad.T @ U - V @ T) > 1e-10 * scale_t:
                    return False, f"transpose identity failed (seed {seed})"
    return True, "10 factorizations"


def _check_degenerate_equivalence():
    prob = build_problem("spectra", n=64, seed=1)
    a = run_solver(SolverConfig(method="cmrh", k_max=8), prob)
    b = run_solver(SolverConfig(method="fcmrh", k_max=8), prob)
    for ra, rb in zip(a.rows, b.rows):
        if ra.res_norm != rb.res_norm or not np.array_equal(ra.x, rb.x):
            return False, f"diverged at iteration {ra.it}"
    return True, "8 iterations bitwise"


def _check_majorants():
    count = 0
    for p in (0.5, 1.0):
        for seed in range(3):
            rng = np.random.default_rng(seed)
            Ad = rng.normal(size=(12, 10))
            b = rng.normal(size=12)
            anchor = rng.normal(size=10)
            model = build_majorant(Ad, b, identity_operator(10),
                                   WeightRule(p, 1e-2), 0.1, anchor)
            if not verify_majorant(model, seed=seed):
                return False, f"majorant violated (p={p}, seed {seed})"
            count += 1
    return True, f"{count} models"


def _check_sufficient_decrease():
    prob = build_problem("spectra", n=64, seed=2)
    n = prob.A.shape[1]
    prior = Prior(WeightRule(1.0, 1e-3), identity_operator(n))
    cfgs = [
        SolverConfig(method="cmrh", k_max=8),
        SolverConfig(method="cmrh", variant="hybrid",
                     param_rule=ParamRule("fixed", fixed_value=1e-2),
                     k_max=8),
        SolverConfig(method="fcmrh", variant="irw", prior=prior,
                     param_rule=ParamRule("fixed", fixed_value=1e-3),
                     k_max=8),
    ]
    checked = 0
    for cfg in cfgs:
        tr = run_solver(cfg, prob)
        for r in tr.rows[1:]:
            if r.report.condition_met and not r.report.trivial:
                if r.mono_curr > r.mono_prev * (1 + 1e-12):
                    return False, f"increase at iteration {r.it}"
                checked += 1
    if checked == 0:
        return False, "no decrease conditions fired"
    return True, f"{checked} conditions"


def _mutant_recurrence(flip: bool):
    """Eager square recurrence with an optional sign flip in the
    coefficient read.  Returns the worst violation over the image
    identity and the pivoted unit-lower structure.  The flip corrupts
    the record and the subtraction together, so the image identity
    stays self-consistent; what it destroys is the elimination, which
    the structure check must catch."""
    rng = np.random.default_rng(3)
    Ad = rng.normal(size=(12, 12))
    b = rng.normal(size=12)
    sign = -1.0 if flip else 1.0
    p = np.arange(12)
    r = b.copy()
    i = int(np.argmax(np.abs(r)))
    beta = float(r[i])
    p[[0, i]] = p[[i, 0]]
    V = [r / beta]
    Z, cols = [], []
    for k in range(1, 7):
        z = V[k - 1]
        Z.append(z)
        w = Ad @ z
        col = np.zeros(k + 1)
        for j in range(k):
            col[j] = sign * w[p[j]]
            w = w - col[j] * V[j]
        cols.append(col)
        tail = p[k:]
        rel = int(np.argmax(np.abs(w[tail])))
        piv = float(w[tail[rel]])
        col[k] = piv
        p[[k, k + rel]] = p[[k + rel, k]]
        V.append(w / piv)
    H = np.zeros((7, 6))
    for j, c in enumerate(cols):
        H[: j + 2, j] = c
    Zm, Um = np.column_stack(Z), np.column_stack(V)
    image_gap = np.linalg.norm(Ad @ Zm - Um @ H) \
        / max(1.0, np.linalg.norm(Ad @ Zm))
    P = Um[p[:7]]
    struct_gap = max(np.max(np.abs(np.triu(P, 1))),
                     np.max(np.abs(np.diag(P) - 1.0)))
    return max(image_gap, struct_gap)


def _check_mutation_sensitivity():
    """Negative control: a sign flip in the coefficient read must
    trip the invariant checks, or they are vacuous."""
    clean = _mutant_recurrence(flip=False)
    broken = _mutant_recurrence(flip=True)
    if clean > 1e-12:
        return False, f"faithful recurrence off ({clean:.2e})"
    if broken < 1e-6:
        return False, f"corrupted recurrence undetected ({broken:.2e})"
    return True, f"violation {clean:.1e} clean vs {broken:.1e} corrupted"


def cmd_selftest(args) -> int:
    checks = [
        ("factorization identities", _check_factorizations),
        ("degenerate equivalence", _check_degenerate_equivalence),
        ("majorant domination", _check_majorants),
        ("sufficient decrease", _check_sufficient_decrease),
        ("mutation sensitivity", _check_mutation_sensitivity),
    ]
    failures = 0
    for name, fn in checks:
        try:
            ok, detail = fn()
        except Exception as e:
            ok, detail = False, f"raised {type(e).__name__}: {e}"
        status = "PASS" if ok else "FAIL"
        failures += 0 if ok else 1
        print(f"{status} {name}: {detail}")
    print(f"{len(checks) - failures} passed, {failures} failed")
    return 0 if failures == 0 else 1


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    if args.command == "run":
        return cmd_run(args)
    if args.command == "compare":
        return cmd_compare(args)
    return cmd_selftest(args)


if __name__ == "__main__":
    sys.exit(main())
