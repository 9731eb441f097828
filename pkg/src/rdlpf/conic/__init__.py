"""Conic problem encodings, solvers, verification and export."""
from .backends import available_backends, get_backend, register_backend, solve_sdp
from .cardinality import solve_cardinality
from .export import export_lp, export_sdpa, parse_sdpa
from .ipm import DEFAULT_MAX_DIM, ProblemTooLarge, interior_point
from .problem import CardinalityProblem, ConicProblem, LMIBlock, ProblemBuilder, Solution
from .verify import count_violations, jacobi_eigenvalues, verify

__all__ = [
    "CardinalityProblem", "ConicProblem", "DEFAULT_MAX_DIM", "LMIBlock", "ProblemBuilder", "ProblemTooLarge",
    "Solution", "available_backends", "count_violations", "export_lp", "export_sdpa", "get_backend",
    "interior_point", "jacobi_eigenvalues", "parse_sdpa", "register_backend", "solve_cardinality",
    "solve_sdp", "verify",
]
