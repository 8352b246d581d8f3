from .consensus import ConsensusMap, IciIndex, build_consensus_map
from .core import (AdmmOptions, AdmmState, AdmmTrace, auto_ici_unit, backhaul_cost, dual_update,
                   global_update, local_subproblem, normalized_accuracy, penalty_schedule,
                   primal_residual, restore_feasibility, run)

__all__ = [
    "ConsensusMap", "IciIndex", "build_consensus_map", "AdmmOptions", "AdmmState", "AdmmTrace",
    "auto_ici_unit", "backhaul_cost", "dual_update", "global_update", "local_subproblem", "normalized_accuracy",
    "penalty_schedule", "primal_residual", "restore_feasibility", "run",
]
