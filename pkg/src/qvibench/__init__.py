"""Solvers and benchmark harness for quasi-variational inequalities."""

from .core import AffineOperator, ContractionParams, QviError
from .problems import QviProblem, builtin_suite, load_problem, reference_solution
from .solvers import Algorithm, Schedule, SolverConfig, Status, solve

__version__ = "0.1.0"

__all__ = [
    "AffineOperator",
    "Algorithm",
    "ContractionParams",
    "QviError",
    "QviProblem",
    "Schedule",
    "SolverConfig",
    "Status",
    "builtin_suite",
    "load_problem",
    "reference_solution",
    "solve",
]
