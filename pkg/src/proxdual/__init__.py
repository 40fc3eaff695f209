"""Exact affine-constrained proximal maps through the convex dual."""
from .dualcore import (
    DualProblem,
    Residuals,
    dual_gradient,
    dual_value,
    duality_gap_certificate,
    fd_gradient_check,
    recover_primal,
    residuals,
)
from .linmap import DenseRows, EntryMask, LinearMap, SingleSum, Stack, gram_min_eig
from .solvers import (
    SolveOptions,
    SolveReport,
    Termination,
    solve_admm,
    solve_altproj,
    solve_gd_bb,
    solve_lbfgs,
    solve_ssn,
)

__version__ = "0.1.0"
