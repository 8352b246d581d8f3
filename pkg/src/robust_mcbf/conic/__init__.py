from .embed import embed_hermitian, extract_hermitian
from .problem import (ConicBuilder, ConicProblem, HermitianVar, PsdBlock, congruence_basis, dump_problem,
                      hermitian_to_params, params_to_hermitian)
from .solver import FAILURE, INFEASIBLE, OPTIMAL, UNBOUNDED, ConicSolution, solve

__all__ = [
    "embed_hermitian", "extract_hermitian", "ConicBuilder", "ConicProblem", "HermitianVar",
    "PsdBlock", "congruence_basis", "dump_problem", "hermitian_to_params", "params_to_hermitian", "solve",
    "ConicSolution", "OPTIMAL", "INFEASIBLE", "UNBOUNDED", "FAILURE",
]
