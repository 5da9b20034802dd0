"""Generic optimization engines shared by the power and placement solvers."""

from .convex import ConcaveConstraints, ConvexProgram, check_concavity, solve_convex
from .lp import LinearProgram, simplex, solve_lp
from .status import (FEAS_TOL, INFEASIBLE, ITERATION_LIMIT, MAX_ITER, OPT_TOL, OPTIMAL,
                     UNBOUNDED, SolveStatus)

__all__ = [
    "ConcaveConstraints", "ConvexProgram", "LinearProgram", "SolveStatus",
    "check_concavity", "simplex", "solve_convex", "solve_lp",
    "FEAS_TOL", "OPT_TOL", "MAX_ITER", "OPTIMAL", "INFEASIBLE", "UNBOUNDED", "ITERATION_LIMIT",
]
