"""Exact formulation of the learning/backup problem on finite point sets."""
from __future__ import annotations

import math

from ..dynamics import SystemModel, Trajectory
from ..environment import KnowledgeState, Setpoint, is_steady_admissible
from ..solver import NlpSpec
from ..solver.discrete import admissible_inputs
from .types import Mode, MpcConfig, StorageState, TrajectoryPair

__all__ = ["FiniteProblem", "steady_candidates"]


def steady_candidates(model: SystemModel, region, allowed=None) -> list:
    out = []
    for (x, u) in sorted(region.points):
        if allowed is not None and (x, u) not in allowed:
            continue
        r = Setpoint(x, u)
        if is_steady_admissible(model, r, region, 0.0):
            out.append(r)
    return out


class FiniteProblem:
    """Blocks are assigned in time order: shared first input, learning plan
    and setpoint, then backup plan and setpoint (baseline: one plan)."""

    def __init__(self, model: SystemModel, knowledge: KnowledgeState, cfg: MpcConfig, costs,
                 storage: StorageState, x_t, active_9j: bool):
        self.model, self.cfg, self.costs, self.x_t = model, cfg, costs, x_t
        self.safe, self.est = knowledge.safe, knowledge.estimated
        self.baseline = cfg.mode == Mode.BASELINE
        self.active_9j = active_9j and cfg.mode == Mode.PROPOSED and math.isfinite(storage.F_hat)
        self.bound = storage.bound
        allowed = None if cfg.setpoints is None else {tuple(p) for p in cfg.setpoints}
        self.sp_safe = steady_candidates(model, self.safe, allowed)
        self.sp_est = steady_candidates(model, self.est, allowed)
        N = cfg.N
        self.lnames = ["u0"] + [f"uL{k}" for k in range(1, N)]
        self.bnames = ["u0"] + [f"uB{k}" for k in range(1, N)]
        if self.baseline:
            self.bnames = ["u0"] + [f"u{k}" for k in range(1, N)]

    def _states(self, assign, names):
        xs = [self.x_t]
        for nm in names:
            if nm not in assign:
                break
            xs.append(self.model.step(xs[-1], assign[nm]))
        return xs

    def _input_block(self, names, k, region):
        def cands(assign):
            x = self._states(assign, names[:k])[-1]
            return admissible_inputs(region, x)
        return (names[k], cands)

    def _setpoint_block(self, key, names, pool):
        def cands(assign):
            xN = self._states(assign, names)[-1]
            return [r for r in pool if r.x == xN]
        return (key, cands)

    def trajectories(self, assign):
        def traj(names):
            xs = self._states(assign, names)
            return Trajectory(states=xs, inputs=[assign[nm] for nm in names])
        if self.baseline:
            b = traj(self.bnames)
            return TrajectoryPair(b, b, assign["rB"], assign["rB"])
        return TrajectoryPair(traj(self.lnames), traj(self.bnames), assign["rL"], assign["rB"])

    def _terms(self, assign):
        from ..costs import tracking_cost

        pair = self.trajectories(assign)
        eps, out = self.cfg.epsilon, self.model.output_fn
        FB = eps * tracking_cost(self.costs, pair.backup, pair.backup_setpoint, self.cfg.N) \
            + self.costs.offset(pair.backup_setpoint, out)
        if self.baseline:
            return FB, FB, pair
        obj = tracking_cost(self.costs, pair.learning, pair.learning_setpoint, self.cfg.N) \
            + self.costs.offset(pair.learning_setpoint, out) + eps * self.costs.offset(pair.backup_setpoint, out)
        return obj, FB, pair

    def spec(self) -> NlpSpec:
        N = self.cfg.N
        # the shared first input must be admissible for the backup, hence in the safe set
        blocks = [self._input_block(self.bnames, 0, self.safe)]
        if not self.baseline:
            blocks += [self._input_block(self.lnames, k, self.est) for k in range(1, N)]
            blocks.append(self._setpoint_block("rL", self.lnames, self.sp_est))
        blocks += [self._input_block(self.bnames, k, self.safe) for k in range(1, N)]
        blocks.append(self._setpoint_block("rB", self.bnames, self.sp_safe))

        def evaluate(assign):
            obj, FB, _ = self._terms(assign)
            return obj, (not self.active_9j) or FB <= self.bound

        def tiebreak(assign):
            _, FB, pair = self._terms(assign)
            seq = tuple(pair.learning.inputs) + tuple(pair.backup.inputs)
            return (FB, seq, (pair.learning_setpoint.x, pair.learning_setpoint.u),
                    (pair.backup_setpoint.x, pair.backup_setpoint.u))

        return NlpSpec(discrete=True, blocks=blocks, evaluate=evaluate, tiebreak=tiebreak,
                       meta={"problem": self})
