"""Learning/backup MPC with artificial setpoints and a storage constraint."""
from .check import PlanAudit, audit_plan
from .continuous import ContinuousProblem
from .controller import (
    build_proposed_problem,
    candidate_shift,
    control_step,
    convergence_active,
    initial_candidate,
    storage_update,
)
from .finite import FiniteProblem, steady_candidates
from .seeds import TargetCache, goal_seed
from .types import (
    InfeasibleStart,
    InvariantBreach,
    Mode,
    ModelInconsistency,
    MpcConfig,
    MpcSolution,
    RecursiveFeasibilityBreach,
    StorageState,
    TrajectoryPair,
)

__all__ = [
    "PlanAudit", "audit_plan", "ContinuousProblem", "FiniteProblem", "steady_candidates",
    "build_proposed_problem", "candidate_shift", "control_step", "convergence_active",
    "initial_candidate", "storage_update", "InfeasibleStart", "InvariantBreach", "Mode",
    "ModelInconsistency", "MpcConfig", "MpcSolution", "RecursiveFeasibilityBreach",
    "StorageState", "TrajectoryPair", "TargetCache", "goal_seed",
]
