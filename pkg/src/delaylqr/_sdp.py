"""Thin wrapper around cvxpy solves with configurable tolerances."""

from dataclasses import dataclass
from typing import Optional
import warnings

import cvxpy as cp
import numpy as np


@dataclass(frozen=True)
class SolverOptions:
    solver: str = "CLARABEL"
    tol_feas: float = 1e-8
    tol_gap: float = 1e-8
    max_iter: Optional[int] = None
    verbose: bool = False

    def kwargs(self) -> dict:
        s = self.solver.upper()
        if s == "CLARABEL":
            kw = {"tol_feas": self.tol_feas, "tol_gap_abs": self.tol_gap, "tol_gap_rel": self.tol_gap}
            if self.max_iter:
                kw["max_iter"] = self.max_iter
        elif s == "CVXOPT":
            kw = {"feastol": self.tol_feas, "abstol": self.tol_gap, "reltol": self.tol_gap}
            if self.max_iter:
                kw["max_iters"] = self.max_iter
        elif s == "SCS":
            kw = {"eps_abs": self.tol_feas, "eps_rel": self.tol_gap}
            if self.max_iter:
                kw["max_iters"] = self.max_iter
        else:
            kw = {}
        return kw


SOLVED = (cp.OPTIMAL, cp.OPTIMAL_INACCURATE)
INFEASIBLE = (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE)


def solve(problem: cp.Problem, options: SolverOptions) -> str:
    """Solve and return the cvxpy status; solver crashes map to ``"solver_error"``."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        try:
            problem.solve(solver=options.solver, verbose=options.verbose, **options.kwargs())
        except cp.error.SolverError:
            return "solver_error"
    return problem.status


def psd(expr):
    """PSD constraint on the symmetric part of a square cvxpy expression."""
    return 0.5 * (expr + expr.T) >> 0


def sym(expr):
    return 0.5 * (expr + expr.T)


def value(x):
    return None if x is None or x.value is None else np.asarray(x.value, dtype=float)
