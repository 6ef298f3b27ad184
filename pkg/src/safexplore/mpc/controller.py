"""Per-step controller logic: candidate shift, storage recursion, solve."""
from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from ..costs import tracking_cost
from ..dynamics import SystemModel, Trajectory, rollout
from ..environment import KnowledgeState, Setpoint
from ..solver import SolverOptions, solve_exact_discrete, solve_nlp
from .check import audit_plan
from . import sparse
from .continuous import ContinuousProblem
from .finite import FiniteProblem
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
    "build_proposed_problem",
    "candidate_shift",
    "storage_update",
    "control_step",
    "initial_candidate",
    "convergence_active",
    "solve_continuous",
]

SHIFT_TOL = 1e-9
# below this learning tracking cost the previous learning plan counts as parked
PARKED_COST = 1e-3


def convergence_active(cfg: MpcConfig, storage: StorageState) -> bool:
    return cfg.mode == Mode.PROPOSED and math.isfinite(storage.F_hat)


def build_proposed_problem(model: SystemModel, x_t, k: KnowledgeState, cfg: MpcConfig, costs,
                           storage: StorageState, warm: TrajectoryPair | None = None):
    """The problem object for the configured mode.

    Finite models give a :class:`FiniteProblem` (solve its ``spec()`` with
    the exact solver); continuous models need ``warm`` to fix the
    sensed-disk assignment of the backup knots.
    """
    active = convergence_active(cfg, storage)
    if model.discrete:
        return FiniteProblem(model, k, cfg, costs, storage, x_t, active)
    if warm is None:
        raise ValueError("continuous problems need a warm start")
    return ContinuousProblem(model, k, cfg, costs, storage, x_t, warm, active)


def candidate_shift(model: SystemModel, prev: MpcSolution, x_next) -> TrajectoryPair:
    B = prev.pair.backup
    r = prev.pair.backup_setpoint
    if model.discrete:
        if B.states[1] != x_next:
            raise ModelInconsistency(f"state {x_next!r} differs from the prediction {B.states[1]!r}")
        inputs = list(B.inputs[1:]) + [r.u]
        states = list(B.states[1:]) + [model.step(B.states[-1], r.u)]
        traj = Trajectory(states=states, inputs=inputs)
        return TrajectoryPair(traj, Trajectory(list(states), list(inputs)), r, r)
    gap = float(np.max(np.abs(np.asarray(x_next, dtype=float) - B.states[1])))
    if gap > SHIFT_TOL:
        raise ModelInconsistency(f"state differs from the prediction by {gap:.3e}")
    inputs = [np.asarray(u, dtype=float).copy() for u in B.inputs[1:]] + [np.asarray(r.u, dtype=float).copy()]
    traj = rollout(model, x_next, inputs)
    twin = Trajectory([s.copy() for s in traj.states], [u.copy() for u in traj.inputs])
    return TrajectoryPair(traj, twin, r, r)


def storage_update(storage: StorageState, F_star: float, stage0: float, epsilon: float, alpha: float,
                   enforce: bool = True, tol: float = 1e-6) -> StorageState:
    """Advance ``(S, F_hat)`` after a solve whose backup cost is ``F_star``."""
    if enforce and math.isfinite(storage.F_hat) and F_star > storage.bound + tol:
        raise InvariantBreach(f"F*={F_star!r} exceeds S+F_hat={storage.bound!r}")
    F_hat = F_star - epsilon * alpha * stage0
    S = storage.S + storage.F_hat - F_star if math.isfinite(storage.F_hat) else storage.S
    return StorageState(S=S, F_hat=F_hat, F_star_prev=F_star)


def _solver_options(cfg: MpcConfig) -> SolverOptions:
    method = cfg.nlp_method if cfg.nlp_method != "ipopt" else "auto"
    return SolverOptions(feas=cfg.feas_tol, stat=cfg.stat_tol, max_iter=cfg.max_iter,
                         inner_max_iter=cfg.inner_max_iter, method=method)


def solve_continuous(prob: ContinuousProblem, z0, cfg: MpcConfig, phase_one: bool = False):
    """Run the configured backend on a condensed problem from ``z0``."""
    if cfg.nlp_method == "ipopt" and sparse.available(prob.model):
        return sparse.solve_sparse(prob, z0, max_iter=cfg.ipopt_max_iter)
    if phase_one:
        # infeasible starts need the penalty method, whatever the step solver is
        return solve_nlp(prob.spec(), z0, _solver_options(cfg), max_iter=60, method="auto")
    return solve_nlp(prob.spec(), z0, _solver_options(cfg))


def _shifted_learning_seed(model, prev: MpcSolution, cand: TrajectoryPair, x_t) -> TrajectoryPair:
    L = prev.pair.learning
    rl = prev.pair.learning_setpoint
    lin = [np.asarray(u, dtype=float) for u in L.inputs[1:]] + [np.asarray(rl.u, dtype=float)]
    bin_ = [lin[0]] + [np.asarray(u, dtype=float) for u in cand.backup.inputs[1:]]
    return TrajectoryPair(rollout(model, x_t, lin), rollout(model, x_t, bin_), rl, cand.backup_setpoint)


def _parked(costs, prev: MpcSolution) -> bool:
    # a parked learning plan shifts onto itself, and the candidate start already recovers it
    L = prev.pair.learning
    return tracking_cost(costs, L, prev.pair.learning_setpoint) < PARKED_COST


def _continuous_solve(model, knowledge, cfg, costs, storage, x_t, cand, seeds):
    active = convergence_active(cfg, storage)
    prob = ContinuousProblem(model, knowledge, cfg, costs, storage, x_t, cand, active)
    cand_audit = audit_plan(model, knowledge, cfg, costs, storage, x_t, cand, active)
    best = None
    for idx, seed in enumerate([cand] + list(seeds)[: max(0, cfg.max_starts - 1)]):
        z0 = prob.clip_start(prob.encode(seed))
        rep = solve_continuous(prob, z0, cfg)
        if rep.status == "failed":
            continue
        pair = prob.decode(prob.polish(rep.point))
        audit = audit_plan(model, knowledge, cfg, costs, storage, x_t, pair, active)
        if not audit.ok or audit.objective > cand_audit.objective:
            continue
        if best is None or audit.objective < best[1].objective:
            best = (pair, audit, idx)
    n_seeds = 1 + min(len(seeds), max(0, cfg.max_starts - 1))
    if best is None:
        return cand, cand_audit, "candidate_fallback", n_seeds
    return best[0], best[1], "local_optimal", n_seeds


def control_step(model: SystemModel, k: KnowledgeState, cfg: MpcConfig, costs, storage: StorageState,
                 x_t, warm_start: TrajectoryPair | None, prev: MpcSolution | None = None, seeds=()):
    """One receding-horizon step; returns ``(u_t, solution, next storage)``.

    ``warm_start`` is the shifted candidate (``None`` only at the first step
    of a finite scenario, or when the caller built one with
    :func:`initial_candidate`).
    """
    active = convergence_active(cfg, storage)
    if warm_start is not None:
        audit = audit_plan(model, k, cfg, costs, storage, x_t, warm_start, active)
        if not audit.ok:
            raise RecursiveFeasibilityBreach(f"candidate infeasible: {audit.failures}")

    if model.discrete:
        prob = FiniteProblem(model, k, cfg, costs, storage, x_t, active)
        rep = solve_exact_discrete(prob.spec())
        if rep.status != "optimal":
            if warm_start is None:
                raise InfeasibleStart("no feasible plan from the initial state")
            pair, status, tried = warm_start, "candidate_fallback", 1
        else:
            pair, status, tried = prob.trajectories(rep.point), "optimal", 1
        audit = audit_plan(model, k, cfg, costs, storage, x_t, pair, active)
    else:
        if warm_start is None:
            raise InfeasibleStart("continuous problems need an initial candidate")
        extra = list(seeds)
        if prev is not None and cfg.mode != Mode.BASELINE and not _parked(costs, prev):
            extra.insert(0, _shifted_learning_seed(model, prev, warm_start, x_t))
        pair, audit, status, tried = _continuous_solve(model, k, cfg, costs, storage, x_t, warm_start, extra)

    if not audit.ok:
        raise RecursiveFeasibilityBreach(f"returned plan infeasible: {audit.failures}")
    B, rB = pair.backup, pair.backup_setpoint
    stage0 = costs.stage(B.states[0], B.inputs[0], rB)
    sol = MpcSolution(pair=pair, objective=audit.objective, F_star=audit.F_backup, solver_status=status,
                      constraint_residuals=audit.residuals, stage0=stage0, seeds_tried=tried)
    new_storage = storage_update(storage, audit.F_backup, stage0, cfg.epsilon, cfg.alpha,
                                 enforce=cfg.mode == Mode.PROPOSED)
    u = B.inputs[0]
    return u, sol, new_storage


def initial_candidate(model: SystemModel, k: KnowledgeState, cfg: MpcConfig, costs, x0) -> TrajectoryPair:
    """A feasible plan for the first step, found by a single-trajectory solve in the safe set."""
    if model.discrete:
        base = replace(cfg, mode=Mode.BASELINE)
        prob = FiniteProblem(model, k, base, costs, StorageState.initial(base), x0, False)
        rep = solve_exact_discrete(prob.spec())
        if rep.status != "optimal":
            raise InfeasibleStart("no feasible plan from the initial state")
        b = prob.trajectories(rep.point).backup
        return TrajectoryPair(b, Trajectory(list(b.states), list(b.inputs)), rep.point["rB"], rep.point["rB"])

    x0 = np.asarray(x0, dtype=float)
    base = replace(cfg, mode=Mode.BASELINE)
    storage = StorageState.initial(base)
    m, N = model.input_dim, cfg.N
    for U in _phase_one_inputs(model, k, x0, N):
        traj = rollout(model, x0, list(U))
        guess = Setpoint(traj.states[-1].copy(), np.zeros(m))
        warm = TrajectoryPair(traj, traj, guess, guess)
        prob = ContinuousProblem(model, k, base, costs, storage, x0, warm, False)
        z0 = prob.polish(prob.clip_start(prob.encode(warm)))
        rep = solve_continuous(prob, z0, base, phase_one=True)
        if rep.status == "failed":
            continue
        pair = prob.decode(prob.polish(rep.point))
        audit = audit_plan(model, k, base, costs, storage, x0, pair, False)
        if audit.ok:
            b = pair.backup
            twin = Trajectory([s.copy() for s in b.states], [u.copy() for u in b.inputs])
            return TrajectoryPair(b, twin, pair.backup_setpoint, pair.backup_setpoint)
    raise InfeasibleStart("could not find a feasible plan from the initial state")


def _phase_one_inputs(model, k, x0, N):
    """Input guesses: all zero, then the bound-constrained minimizer of the
    state drift ``sum ||x_k - x0||^2`` (which brakes a moving vehicle)."""
    from scipy.optimize import minimize

    from .continuous import base_box, rollout_with_sens

    n, m = model.state_dim, model.input_dim
    yield np.zeros((N, m))
    lo, hi = base_box(k, n + m)
    bounds = [(a if np.isfinite(a) else None, b if np.isfinite(b) else None)
              for a, b in zip(np.tile(lo[n:], N), np.tile(hi[n:], N))]

    def drift(u):
        X, S = rollout_with_sens(model, x0, u.reshape(N, m))
        D = X - x0
        return float(np.sum(D * D)), np.einsum("ki,kij->j", 2 * D, S)

    res = minimize(drift, np.zeros(N * m), jac=True, method="L-BFGS-B", bounds=bounds)
    yield res.x.reshape(N, m)
