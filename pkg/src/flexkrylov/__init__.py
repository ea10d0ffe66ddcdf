"""Inner-product-free flexible Krylov solvers for ill-posed problems.

The package provides pivoted Hessenberg and generalized Hessenberg
factorizations that build Krylov bases without inner products, solvers
on top of them (plain, Tikhonov-regularized, iteratively reweighted and
sketched variants), regularization parameter rules, monotonicity
diagnostics, test-problem generators and a simulated low-precision
arithmetic layer.
"""

from .hessenberg import (FixedPreconditionerPlan, IdentityPlan,
                         SeededDiagonalPlan, run_factorization)
from .linalg import LinearOperator, MatrixOperator
from .lowprec import FP16, Q43, parse_precision
from .precond import WeightRule, d1_operator, identity_operator
from .problems import TestProblem, build_problem
from .regparam import ParamRule
from .solvers import (Prior, SketchPlan, SolverConfig, SolverTrace, TraceRow,
                      run_solver)

__version__ = "0.1.0"

__all__ = [
    "FixedPreconditionerPlan",
    "IdentityPlan",
    "SeededDiagonalPlan",
    "run_factorization",
    "LinearOperator",
    "MatrixOperator",
    "FP16",
    "Q43",
    "parse_precision",
    "WeightRule",
    "d1_operator",
    "identity_operator",
    "TestProblem",
    "build_problem",
    "ParamRule",
    "Prior",
    "SketchPlan",
    "SolverConfig",
    "SolverTrace",
    "TraceRow",
    "run_solver",
    "__version__",
]
