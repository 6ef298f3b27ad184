import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safexplore.costs import tracking_cost
from safexplore.dynamics import Trajectory, rollout
from safexplore.environment import FinitePointSet, KnowledgeState, Setpoint
from safexplore.mpc import (
    FiniteProblem,
    InvariantBreach,
    Mode,
    ModelInconsistency,
    MpcConfig,
    MpcSolution,
    StorageState,
    TrajectoryPair,
    audit_plan,
    build_proposed_problem,
    candidate_shift,
    control_step,
    storage_update,
)
from safexplore.solver import solve_exact_discrete

from oracles import TOY_TABLE, toy_closed_loop


def solve_toy(toy, storage, x=2, mode=None):
    cfg = toy.mpc if mode is None else replace(toy.mpc, mode=mode)
    prob = build_proposed_problem(toy.model, x, toy.knowledge, cfg, toy.costs, storage)
    rep = solve_exact_discrete(prob.spec())
    return prob, rep, prob.trajectories(rep.point)


def test_counterexample_first_step(toy):
    prob, rep, pair = solve_toy(toy, StorageState.initial(toy.mpc))
    assert pair.learning.states == [2, 2, 1, 0] and pair.learning.inputs == [2, 1, 0]
    assert pair.backup.states == [2, 2, 0, 0] and pair.backup.inputs == [2, 0, 0]
    assert tracking_cost(toy.costs, pair.learning, pair.learning_setpoint) == 4
    assert tracking_cost(toy.costs, pair.backup, pair.backup_setpoint) == 12
    assert rep.objective == 4


def test_shared_first_state_and_input(toy):
    _, _, pair = solve_toy(toy, StorageState.initial(toy.mpc))
    assert pair.learning.states[0] == pair.backup.states[0]
    assert pair.learning.inputs[0] == pair.backup.inputs[0]
    assert pair.learning.states[1] == pair.backup.states[1]


def test_baseline_is_single_trajectory(toy):
    prob, rep, pair = solve_toy(toy, StorageState.initial(toy.mpc), mode=Mode.BASELINE)
    assert pair.learning is pair.backup
    # in the safe set the only plans to 0 are [2,2,0] (cost 12) and [0,0,0] (cost 10)
    assert pair.backup.inputs == [0, 0, 0]
    assert rep.objective == toy.mpc.epsilon * 10


def test_tight_bound_forces_safe_plan(toy):
    storage = StorageState(S=1, F_hat=10)
    assert storage.bound == 11
    _, rep, pair = solve_toy(toy, storage)
    assert pair.backup.states == [2, 0, 0, 0] and pair.backup.inputs == [0, 0, 0]
    assert pair.learning.inputs[0] == 0


def test_steady_start_keeps_state(toy):
    cfg = replace(toy.mpc, N=1)
    costs = replace(toy.costs, N=1)
    prob = build_proposed_problem(toy.model, 0, toy.knowledge, cfg, costs, StorageState.initial(cfg))
    rep = solve_exact_discrete(prob.spec())
    pair = prob.trajectories(rep.point)
    assert pair.backup.states == [0, 0] and pair.learning.states == [0, 0]
    assert rep.objective == costs.offset(Setpoint(0, 0))


def test_candidate_shift_toy(toy):
    _, rep, pair = solve_toy(toy, StorageState.initial(toy.mpc))
    prev = MpcSolution(pair=pair, objective=rep.objective, F_star=12, solver_status="optimal")
    cand = candidate_shift(toy.model, prev, 2)
    assert cand.backup.states == [2, 0, 0, 0] and cand.backup.inputs == [0, 0, 0]
    assert cand.learning.states == cand.backup.states
    assert cand.backup_setpoint == Setpoint(0, 0)
    storage = storage_update(StorageState.initial(toy.mpc), 12, 2, 1, 1)
    assert audit_plan(toy.model, toy.knowledge, toy.mpc, toy.costs, storage, 2, cand, True).ok
    with pytest.raises(ModelInconsistency):
        candidate_shift(toy.model, prev, 1)


def test_candidate_shift_of_steady_plan_is_identical(car):
    r = Setpoint(np.array([3.0, 0.0, 0.0, 0.0, 0.0]), np.zeros(2))
    tr = rollout(car.model, r.x, [r.u] * 4)
    sol = MpcSolution(pair=TrajectoryPair(tr, tr, r, r), objective=0.0, F_star=0.0, solver_status="optimal")
    cand = candidate_shift(car.model, sol, r.x)
    for a, b in zip(cand.backup.states, tr.states):
        assert np.array_equal(a, b)
    with pytest.raises(ModelInconsistency):
        candidate_shift(car.model, sol, r.x + 1e-6)


def test_storage_update_examples():
    s = storage_update(StorageState(S=3, F_hat=math.inf), 12, 2, 1, 1)
    # the recursion as written: F_hat = 12 - 1 * 1 * l(2, 2) = 10
    assert s.F_hat == 10 and s.S == 3
    s = storage_update(StorageState(S=3, F_hat=12), 12, 2, 1, 1)
    assert s.F_hat == 10 and s.S == 3
    s = storage_update(StorageState(S=5, F_hat=7), 7, 0, 0.01, 1)
    assert s.S == 5 and s.F_hat == 7
    with pytest.raises(InvariantBreach):
        storage_update(StorageState(S=0, F_hat=1), 2, 0, 1, 1)


def test_stationary_loop_drains_linearly():
    # a loop that keeps re-solving to the same plan loses eps*alpha*l per step
    eps, alpha, c, F = 0.01, 1.0, 6.0, 40.0
    s = storage_update(StorageState(S=2.0), F, c, eps, alpha)
    history = [s.S]
    for _ in range(50):
        s = storage_update(s, F, c, eps, alpha, enforce=False)
        history.append(s.S)
    steps = np.diff(history)
    assert np.allclose(steps, -eps * alpha * c, atol=1e-12)
    assert s.bound == pytest.approx(2.0 + F - 51 * eps * alpha * c, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 100), st.floats(0, 100),
       st.lists(st.tuples(st.floats(0, 100), st.floats(0, 10)), min_size=1, max_size=30),
       st.floats(1e-3, 1), st.floats(1e-3, 1))
def test_storage_closed_form(S0, F0, seq, eps, alpha):
    """S_{t+1} = S_0 + F_hat_0 - F_hat_{t+1} - sum eps*alpha*l_i."""
    s = StorageState(S=S0, F_hat=F0)
    drained = 0.0
    for F_star, stage in seq:
        s = storage_update(s, F_star, stage, eps, alpha, enforce=False)
        drained += eps * alpha * stage
        assert s.S == pytest.approx(S0 + F0 - s.F_hat - drained, abs=1e-9 * (1 + S0 + F0 + 100 * len(seq)))


def _run_toy(toy, steps, mode=None, N=None):
    cfg = toy.mpc if mode is None else replace(toy.mpc, mode=mode)
    costs = toy.costs
    if N is not None:
        cfg, costs = replace(cfg, N=N), replace(costs, N=N)
    storage = StorageState.initial(cfg)
    x, warm, prev = toy.x0, None, None
    out = []
    for _ in range(steps):
        u, sol, new = control_step(toy.model, toy.knowledge, cfg, costs, storage, x, warm, prev)
        out.append((x, u, storage, sol))
        warm = candidate_shift(toy.model, sol, toy.model.step(x, u))
        x, prev, storage = toy.model.step(x, u), sol, new
    return out


def test_control_step_stays_while_storage_is_loose(toy):
    (x, u, storage, sol), = _run_toy(toy, 1)
    assert u == 2 and sol.pair.learning.states == [2, 2, 1, 0]
    assert sol.F_star == 12


def test_control_step_matches_oracle(toy):
    oracle = toy_closed_loop(N=3, S0=3, steps=12)
    run = _run_toy(toy, 12)
    for o, (x, u, storage, sol) in zip(oracle, run):
        assert (x, u) == (o["x"], o["u"])
        assert storage.S == o["S"] and storage.F_hat == o["F_hat"]
        assert sol.F_star == o["F_star"]
        assert tuple(sol.pair.backup.inputs) == o["backup"][0]
        assert tuple(sol.pair.learning.inputs) == o["learning"][0]


def test_steady_at_best_setpoint(toy):
    storage = StorageState(S=1, F_hat=0)
    u, sol, new = control_step(toy.model, toy.knowledge, toy.mpc, toy.costs, storage, 0, None)
    assert u == 0 and sol.objective == 0 and new.S == 1 and new.F_hat == 0


def test_config_validation():
    for bad in (dict(N=0), dict(alpha=0), dict(alpha=1.5), dict(epsilon=0), dict(S0=-1), dict(nlp_method="x")):
        with pytest.raises(ValueError):
            MpcConfig(**bad)
    assert MpcConfig(mode="no9j").mode == Mode.WITHOUT_9J


@pytest.mark.parametrize("mode, kw", [(Mode.WITHOUT_9J, dict(use_9j=False)), (Mode.BASELINE, dict(baseline=True))])
def test_other_modes_match_oracle(toy, mode, kw):
    oracle = toy_closed_loop(N=3, S0=3, steps=10, **kw)
    run = _run_toy(toy, 10, mode=mode)
    assert [r[0] for r in run] == [o["x"] for o in oracle]
    assert [r[1] for r in run] == [o["u"] for o in oracle]
    assert [r[3].F_star for r in run] == pytest.approx([o["F_star"] for o in oracle])


@pytest.mark.parametrize("N", [2, 3, 4])
@pytest.mark.parametrize("S0", [0, 1, 3, 7])
def test_proposed_loop_matches_oracle_over_budgets(toy, N, S0):
    oracle = toy_closed_loop(N=N, S0=S0, steps=10)
    tcfg = replace(toy, mpc=replace(toy.mpc, S0=S0))
    run = _run_toy(tcfg, 10, N=N)
    assert [r[0] for r in run] == [o["x"] for o in oracle]
    assert [r[2].S for r in run] == pytest.approx([o["S"] for o in oracle])
