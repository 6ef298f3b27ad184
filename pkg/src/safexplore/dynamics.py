"""Discrete-time plant models.

Two models ship with the package: the forward-Euler kinematic bicycle used for
the car scenario and the integer toy system ``x+ = u``.  Integer grid
integrators used by the transitory-setpoint checks live here as well.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels

__all__ = [
    "ContractViolation",
    "SystemModel",
    "BicycleParams",
    "Trajectory",
    "bicycle_step",
    "bicycle_model",
    "toy_step",
    "toy_model",
    "integrator_model",
    "rollout",
    "steady_residual",
]


class ContractViolation(ValueError):
    """Raised when an argument does not match the declared model dimensions."""


@dataclass(frozen=True)
class SystemModel:
    state_dim: int
    input_dim: int
    output_dim: int
    step_fn: Callable
    output_fn: Callable
    sample_time: Optional[float] = None
    # (A, B) = d step / d(x, u); only continuous models provide it
    step_jac: Optional[Callable] = None
    # (C, D) = d output / d(x, u)
    output_jac: Optional[Callable] = None
    # batched rollout with input sensitivities, see kernels.rollout_sens
    rollout_sens: Optional[Callable] = None
    discrete: bool = False
    name: str = "model"
    # indices of (x, u) that are free on the steady manifold; every other
    # coordinate is zero there.  None means no such parametrization is known.
    steady_coords: Optional[tuple] = None
    # the step written with CasADi symbols, for the sparse interior-point backend
    symbolic_step: Optional[Callable] = None

    def step(self, x, u):
        if self.discrete:
            return self.step_fn(x, u)
        x = _as_vec(x, self.state_dim, "state")
        u = _as_vec(u, self.input_dim, "input")
        return self.step_fn(x, u)

    def output(self, x, u):
        if self.discrete:
            return self.output_fn(x, u)
        return self.output_fn(_as_vec(x, self.state_dim, "state"), _as_vec(u, self.input_dim, "input"))


def _as_vec(v, dim: int, what: str) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.shape != (dim,):
        raise ContractViolation(f"{what} has shape {arr.shape}, expected ({dim},)")
    return arr


@dataclass(frozen=True)
class BicycleParams:
    l_r: float = 1.7
    sample_time: float = 0.2

    def __post_init__(self):
        if not self.l_r > 0:
            raise ContractViolation("l_r must be positive")
        if not self.sample_time > 0:
            raise ContractViolation("sample_time must be positive")


@dataclass
class Trajectory:
    """Open-loop state/input sequence; ``states`` has one more entry than ``inputs``."""

    states: list
    inputs: list

    def __post_init__(self):
        if len(self.states) != len(self.inputs) + 1:
            raise ContractViolation(
                f"trajectory has {len(self.states)} states for {len(self.inputs)} inputs"
            )

    @property
    def horizon(self) -> int:
        return len(self.inputs)

    def consistency_error(self, model: SystemModel) -> float:
        """Largest deviation between ``states[k+1]`` and ``f(states[k], inputs[k])``."""
        worst = 0.0
        for k, u in enumerate(self.inputs):
            nxt = model.step(self.states[k], u)
            if model.discrete:
                if nxt != self.states[k + 1]:
                    return math.inf
            else:
                worst = max(worst, float(np.max(np.abs(np.asarray(nxt) - np.asarray(self.states[k + 1])))))
        return worst

    def to_dict(self) -> dict:
        return {"states": [_jsonable(s) for s in self.states], "inputs": [_jsonable(u) for u in self.inputs]}

    @classmethod
    def from_dict(cls, data: dict, discrete: bool = False) -> "Trajectory":
        if discrete:
            return cls(states=[_from_json_discrete(s) for s in data["states"]],
                       inputs=[_from_json_discrete(u) for u in data["inputs"]])
        return cls(states=[np.asarray(s, dtype=float) for s in data["states"]],
                   inputs=[np.asarray(u, dtype=float) for u in data["inputs"]])


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return [float(a) for a in v]
    if isinstance(v, tuple):
        return list(v)
    return v


def _from_json_discrete(v):
    return tuple(v) if isinstance(v, list) else v


# -- kinematic bicycle -------------------------------------------------------


def bicycle_step(x, u, params: BicycleParams = BicycleParams()) -> np.ndarray:
    """One forward-Euler step of the kinematic bicycle.

    State is ``[x1, x2, psi, v, beta]`` (m, m, rad, m/s, rad), input is
    ``[u1, u2]`` (m/s^2, rad/s).
    """
    x = _as_vec(x, 5, "state")
    u = _as_vec(u, 2, "input")
    return kernels.bicycle_step(x, u, params.sample_time, params.l_r)


def _bicycle_jac(params: BicycleParams):
    dt, lr = params.sample_time, params.l_r

    def jac(x, u):
        _, _, psi, v, beta = x
        c, s = math.cos(psi + beta), math.sin(psi + beta)
        A = np.eye(5)
        A[0, 2] = -dt * v * s
        A[0, 3] = dt * c
        A[0, 4] = -dt * v * s
        A[1, 2] = dt * v * c
        A[1, 3] = dt * s
        A[1, 4] = dt * v * c
        A[2, 3] = dt * math.sin(beta) / lr
        A[2, 4] = dt * v * math.cos(beta) / lr
        B = np.zeros((5, 2))
        B[3, 0] = dt
        B[4, 1] = dt
        return A, B

    return jac


def _bicycle_symbolic(params: BicycleParams):
    dt, lr = params.sample_time, params.l_r

    def step(x, u):
        import casadi as ca

        a = x[2] + x[4]
        return ca.vertcat(
            x[0] + dt * x[3] * ca.cos(a),
            x[1] + dt * x[3] * ca.sin(a),
            x[2] + dt * (x[3] / lr) * ca.sin(x[4]),
            x[3] + dt * u[0],
            x[4] + dt * u[1],
        )

    return step


_OUT_C = np.array([[1.0, 0, 0, 0, 0], [0, 1.0, 0, 0, 0]])
_OUT_D = np.zeros((2, 2))


def bicycle_model(params: BicycleParams = BicycleParams()) -> SystemModel:
    dt, lr = params.sample_time, params.l_r
    return SystemModel(
        state_dim=5,
        input_dim=2,
        output_dim=2,
        step_fn=lambda x, u: kernels.bicycle_step(x, u, dt, lr),
        output_fn=lambda x, u: np.array([x[0], x[1]], dtype=float),
        sample_time=dt,
        step_jac=_bicycle_jac(params),
        output_jac=lambda x, u: (_OUT_C, _OUT_D),
        rollout_sens=lambda x0, U: kernels.bicycle_rollout_sens(x0, U, dt, lr),
        name="bicycle",
        # f(x, u) = x  iff  v = 0 and u = 0
        steady_coords=(0, 1, 2, 4),
        symbolic_step=_bicycle_symbolic(params),
    )


# -- finite integer systems --------------------------------------------------


def toy_step(x: int, u: int) -> int:
    """The integer system ``x+ = u``."""
    return u


def toy_model() -> SystemModel:
    return SystemModel(
        state_dim=1,
        input_dim=1,
        output_dim=1,
        step_fn=toy_step,
        output_fn=lambda x, u: x,
        discrete=True,
        name="toy",
    )


def integrator_model() -> SystemModel:
    """Integer integrator ``x+ = x + u`` on a 1-D grid."""
    return SystemModel(
        state_dim=1,
        input_dim=1,
        output_dim=1,
        step_fn=lambda x, u: x + u,
        output_fn=lambda x, u: x,
        discrete=True,
        name="integrator",
    )


# -- generic helpers ---------------------------------------------------------


def rollout(model: SystemModel, x0, inputs: Sequence) -> Trajectory:
    if len(inputs) == 0:
        raise ContractViolation("rollout needs at least one input")
    if model.discrete:
        states = [x0]
        for u in inputs:
            states.append(model.step(states[-1], u))
        return Trajectory(states=states, inputs=list(inputs))
    x = _as_vec(x0, model.state_dim, "state").copy()
    U = [_as_vec(u, model.input_dim, "input").copy() for u in inputs]
    states = [x]
    for u in U:
        states.append(np.asarray(model.step(states[-1], u), dtype=float))
    return Trajectory(states=states, inputs=U)


def steady_residual(model: SystemModel, r) -> float:
    """Euclidean norm of ``f(x, u) - x`` at the pair ``r = (x, u)``."""
    x, u = r.x, r.u
    if model.discrete:
        return float(abs(model.step(x, u) - x))
    return float(np.linalg.norm(np.asarray(model.step(x, u)) - np.asarray(x, dtype=float)))
