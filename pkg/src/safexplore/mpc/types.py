"""Configuration and result records shared by the MPC problem builders."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from ..dynamics import Trajectory
from ..environment import Setpoint


class Mode(str, Enum):
    PROPOSED = "proposed"
    WITHOUT_9J = "no9j"
    BASELINE = "baseline"

    @classmethod
    def parse(cls, value) -> "Mode":
        if isinstance(value, Mode):
            return value
        aliases = {"proposed": cls.PROPOSED, "no9j": cls.WITHOUT_9J, "without9j": cls.WITHOUT_9J,
                   "proposed_without_9j": cls.WITHOUT_9J, "baseline": cls.BASELINE}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ValueError(f"unknown mode {value!r}") from None


class InfeasibleStart(RuntimeError):
    """No feasible candidate exists at the first step."""


class RecursiveFeasibilityBreach(RuntimeError):
    """The shifted candidate is infeasible; this indicates a bug."""


class InvariantBreach(RuntimeError):
    """A storage-function invariant failed beyond tolerance."""


class ModelInconsistency(RuntimeError):
    """The measured state does not match the nominal prediction."""


@dataclass(frozen=True)
class MpcConfig:
    N: int = 50
    epsilon: float = 0.01
    alpha: float = 1.0
    lam: float = 0.01
    mode: Mode = Mode.PROPOSED
    S0: float = 0.0
    # None means "unbounded": the convergence constraint starts at t = 1
    F_hat0: Optional[float] = None
    feas_tol: float = 1e-6
    stat_tol: float = 1e-4
    max_iter: int = 30
    inner_max_iter: int = 400
    # tightening of smooth inequalities so solver tolerance cannot leak out of the sets
    margin: float = 1e-5
    storage_margin: float = 1e-6
    max_starts: int = 4
    # "ipopt" (sparse interior point, needs CasADi and a symbolic model),
    # "slsqp", "auglag" or "auto" (SLSQP, then the augmented Lagrangian)
    nlp_method: str = "ipopt"
    ipopt_max_iter: int = 300
    seed: int = 0
    # finite scenarios: restrict artificial setpoints to these (x, u) pairs
    setpoints: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.nlp_method not in ("ipopt", "slsqp", "auglag", "auto"):
            raise ValueError(f"unknown nlp_method {self.nlp_method!r}")
        if self.S0 < 0:
            raise ValueError("S0 must be nonnegative")


@dataclass(frozen=True)
class StorageState:
    S: float
    F_hat: float = math.inf
    F_star_prev: float = math.nan

    @classmethod
    def initial(cls, cfg: MpcConfig) -> "StorageState":
        return cls(S=cfg.S0, F_hat=math.inf if cfg.F_hat0 is None else cfg.F_hat0)

    @property
    def bound(self) -> float:
        return self.S + self.F_hat


@dataclass
class TrajectoryPair:
    learning: Trajectory
    backup: Trajectory
    learning_setpoint: Setpoint
    backup_setpoint: Setpoint

    def to_dict(self) -> dict:
        return {
            "learning": self.learning.to_dict(),
            "backup": self.backup.to_dict(),
            "learning_setpoint": self.learning_setpoint.to_dict(),
            "backup_setpoint": self.backup_setpoint.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict, discrete: bool = False) -> "TrajectoryPair":
        return cls(
            learning=Trajectory.from_dict(data["learning"], discrete),
            backup=Trajectory.from_dict(data["backup"], discrete),
            learning_setpoint=Setpoint.from_dict(data["learning_setpoint"]),
            backup_setpoint=Setpoint.from_dict(data["backup_setpoint"]),
        )


@dataclass
class MpcSolution:
    pair: TrajectoryPair
    objective: float
    F_star: float
    solver_status: str
    constraint_residuals: dict = field(default_factory=dict)
    stage0: float = 0.0
    seeds_tried: int = 0
