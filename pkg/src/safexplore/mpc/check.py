"""Exact feasibility audit of a learning/backup plan.

Everything is recomputed from the trajectories themselves against the
untightened sets, so the verdict does not depend on how the plan was found.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..dynamics import SystemModel
from ..environment import (
    STEADY_TOL,
    KnowledgeState,
    contains,
    is_steady_admissible,
    region_violation,
)
from .continuous import pair_cost_terms
from .types import Mode, MpcConfig, StorageState, TrajectoryPair

__all__ = ["PlanAudit", "audit_plan", "DYNAMICS_TOL"]

DYNAMICS_TOL = 1e-9
STORAGE_TOL = 1e-9


@dataclass
class PlanAudit:
    ok: bool
    residuals: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    objective: float = math.nan
    F_backup: float = math.nan


def _gap(a, b) -> float:
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        return float(np.max(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))))
    return 0.0 if a == b else math.inf


def audit_plan(model: SystemModel, knowledge: KnowledgeState, cfg: MpcConfig, costs, storage: StorageState,
               x_t, pair: TrajectoryPair, active_9j: bool) -> PlanAudit:
    res, fails = {}, []
    exact = model.discrete
    eq_tol = 0.0 if exact else DYNAMICS_TOL
    steady_tol = 0.0 if exact else STEADY_TOL

    def record(name, value, tol):
        res[name] = max(res.get(name, 0.0), float(value))
        if not value <= tol:
            fails.append(name)

    L, B = pair.learning, pair.backup
    for name, tr in (("learning", L), ("backup", B)):
        if tr.horizon != cfg.N:
            record(f"{name}_horizon", math.inf, 0.0)
            continue
        record(f"{name}_initial_state", _gap(tr.states[0], x_t), eq_tol)
        record(f"{name}_dynamics", tr.consistency_error(model), eq_tol)
    record("shared_first_input", _gap(L.inputs[0], B.inputs[0]), 0.0)
    if fails:
        return PlanAudit(False, res, sorted(set(fails)))

    safe, est = knowledge.safe, knowledge.estimated
    for name, tr, region in (("learning_set", L, est), ("backup_set", B, safe)):
        worst, inside = 0.0, True
        for x, u in zip(tr.states[:-1], tr.inputs):
            z = (x, u)
            if not contains(region, z):
                inside = False
                worst = max(worst, region_violation(region, z))
        res[name] = worst
        if not inside:
            fails.append(name)

    for name, tr, r, region in (("learning", L, pair.learning_setpoint, est),
                                ("backup", B, pair.backup_setpoint, safe)):
        record(f"{name}_terminal", _gap(tr.states[-1], r.x), steady_tol)
        if not is_steady_admissible(model, r, region, cfg.lam):
            fails.append(f"{name}_setpoint")
            res[f"{name}_setpoint"] = region_violation(region, r.z(), cfg.lam) if not exact else math.inf
        elif cfg.setpoints is not None and (r.x, r.u) not in {tuple(p) for p in cfg.setpoints}:
            fails.append(f"{name}_setpoint")
            res[f"{name}_setpoint"] = math.inf
        else:
            res[f"{name}_setpoint"] = 0.0

    obj, FB = pair_cost_terms(model, costs, cfg, pair)
    if active_9j and cfg.mode == Mode.PROPOSED and math.isfinite(storage.F_hat):
        record("convergence", max(0.0, FB - storage.bound), STORAGE_TOL)
    return PlanAudit(not fails, res, sorted(set(fails)), obj, FB)
