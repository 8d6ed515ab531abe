from .ldl import FactorizationError, Inertia, NumericLDL, SymbolicLDL, factorize
from .solver import (
    CONVERGED,
    INFEASIBLE,
    ITERATION_LIMIT,
    NUMERIC_FAILURE,
    Iterate,
    KktPatternError,
    NumericFailure,
    Prepared,
    SolverOptions,
    SolverResult,
    convergence_check,
    fraction_to_boundary,
    kkt_assemble,
    line_search,
    solve,
)

__all__ = [
    "CONVERGED", "INFEASIBLE", "ITERATION_LIMIT", "NUMERIC_FAILURE",
    "FactorizationError", "Inertia", "Iterate", "KktPatternError", "NumericFailure",
    "NumericLDL", "Prepared", "SolverOptions", "SolverResult", "SymbolicLDL",
    "convergence_check", "factorize", "fraction_to_boundary", "kkt_assemble",
    "line_search", "solve",
]
