import copy
import math
from fractions import Fraction

import numpy as np
import pytest

from safexplore.analysis import (
    CHECKS,
    delta_ladder,
    is_transitory_def1,
    is_transitory_def2,
    read_verdict,
    verify_run,
    write_verdict,
)
from safexplore.costs import GridCost, NoSteadySetpoint
from safexplore.dynamics import integrator_model
from safexplore.environment import FinitePointSet, Setpoint
from safexplore.sim import load_scenario, run_closed_loop

from oracles import brute_transitory, brute_value, grid_region

INTEGRATOR = integrator_model()


def _grid(free, inputs):
    return FinitePointSet.of(grid_region(free, inputs))


def _report_matches_oracle(rep, region, costs, r1, eps, N, def2):
    stage = lambda x, u, r: costs.stage(x, u, Setpoint(*r))  # noqa: E731
    offset = lambda r: costs.offset(Setpoint(*r))  # noqa: E731
    oracle = brute_transitory(region.points, stage, offset, (r1.x, r1.u), eps, N, rep.delta_used, def2)
    assert rep.is_transitory == oracle


def _check_witness(w, region, costs, r1, eps, N, def2):
    """Recompute both sides of the witness inequality by enumeration."""
    x, u = w.probe
    r2 = w.setpoint
    stage = lambda a, b, r: costs.stage(a, b, Setpoint(*r))  # noqa: E731
    rhs = eps * brute_value(region.points, stage, x, (r1.x, r1.u), N) + costs.offset(r1)
    if def2:
        lhs = eps * (costs.stage(x, u, r2) + brute_value(region.points, stage, x + u, (r2.x, r2.u), N - 1))
        lhs += costs.offset(r2)
        assert costs.offset(r2) < costs.offset(r1)
    else:
        lhs = eps * brute_value(region.points, stage, x, (r2.x, r2.u), N) + costs.offset(r2)
    assert lhs == w.lhs and rhs == w.rhs
    assert lhs < rhs


def test_gap_example_is_transitory():
    sc = load_scenario("grid_gap")
    r1 = Setpoint(4, 0)
    rep = is_transitory_def1(sc.model, sc.costs, r1, sc.knowledge.truth, 1, 3)
    assert rep.is_transitory
    assert rep.witness.setpoint.x > 5
    for w in rep.witnesses:
        _check_witness(w, sc.knowledge.truth, sc.costs, r1, 1, 3, False)
    _report_matches_oracle(rep, sc.knowledge.truth, sc.costs, r1, 1, 3, False)


def test_wide_gap_is_not_transitory():
    # inputs move at most two cells, so a two-cell wall cannot be crossed
    region = _grid([c for c in range(12) if c not in (5, 6)], range(-2, 3))
    costs = GridCost(q=1, r=1, p=1, y_desired=11, N=3)
    r1 = Setpoint(4, 0)
    rep = is_transitory_def1(INTEGRATOR, costs, r1, region, 1, 3)
    assert not rep.is_transitory and rep.failing_probe is not None
    _report_matches_oracle(rep, region, costs, r1, 1, 3, False)
    rep2 = is_transitory_def2(INTEGRATOR, costs, r1, region, 1, 3)
    assert not rep2.is_transitory


@pytest.mark.parametrize("check", [is_transitory_def1, is_transitory_def2])
def test_global_minimizer_is_not_transitory(check):
    region = _grid(range(8), (-1, 0, 1))
    costs = GridCost(q=1, r=1, p=1, y_desired=20, N=3)
    rep = check(INTEGRATOR, costs, Setpoint(7, 0), region, 0.01, 3)
    assert not rep.is_transitory


def test_empty_manifold_raises():
    region = FinitePointSet.of([(0, 1), (1, 1)])
    with pytest.raises(NoSteadySetpoint):
        is_transitory_def2(INTEGRATOR, GridCost(), Setpoint(0, 0), region, 1, 2)


def test_delta_ladder():
    assert delta_ladder([0, 2, 5, math.inf]) == [1.0, 3.0, 5]
    assert delta_ladder([0, 0]) == [1.0]


def test_explicit_delta_beyond_ladder():
    sc = load_scenario("grid_gap")
    rep = is_transitory_def1(sc.model, sc.costs, Setpoint(4, 0), sc.knowledge.truth, 1, 3)
    small = is_transitory_def1(sc.model, sc.costs, Setpoint(4, 0), sc.knowledge.truth, 1, 3, delta=rep.delta_used)
    assert small.is_transitory and small.delta_used == rep.delta_used
    huge = is_transitory_def1(sc.model, sc.costs, Setpoint(4, 0), sc.knowledge.truth, 1, 3, delta=1e9)
    assert huge.is_transitory == brute_transitory(
        sc.knowledge.truth.points, lambda x, u, r: sc.costs.stage(x, u, Setpoint(*r)),
        lambda r: sc.costs.offset(Setpoint(*r)), (4, 0), 1, 3, 1e9, False)


def test_epsilon_flip_on_wall():
    sc = load_scenario("grid_wall")
    r1 = Setpoint(4, 0)
    region = sc.knowledge.truth
    hi = is_transitory_def2(sc.model, sc.costs, r1, region, 1, sc.mpc.N)
    lo = is_transitory_def2(sc.model, sc.costs, r1, region, 0.1, sc.mpc.N)
    assert not hi.is_transitory and lo.is_transitory
    for w in lo.witnesses:
        _check_witness(w, region, sc.costs, r1, 0.1, sc.mpc.N, True)
    _report_matches_oracle(hi, region, sc.costs, r1, 1, sc.mpc.N, True)


def random_prop1_grid(rng):
    """Free line of cells with unit inputs and an offset weight large enough
    that one cell of progress outweighs any short detour."""
    L = int(rng.integers(5, 10))
    q, r = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    p = 6 * q + 3 * r + int(rng.integers(1, 5))
    costs = GridCost(q=q, r=r, p=p, y_desired=L + int(rng.integers(1, 4)), N=int(rng.integers(3, 5)))
    return _grid(range(L + 1), (-1, 0, 1)), costs, L


def test_interior_setpoints_are_transitory(rng):
    for _ in range(10):
        region, costs, L = random_prop1_grid(rng)
        for x1 in range(1, L):
            r1 = Setpoint(x1, 0)
            for eps in (1, Fraction(1, 10), Fraction(1, 100)):
                rep = is_transitory_def2(INTEGRATOR, costs, r1, region, eps, costs.N)
                assert rep.is_transitory, (L, costs, x1, eps)
                _check_witness(rep.witness, region, costs, r1, eps, costs.N, True)


def test_def2_epsilon_monotone(rng):
    sc = load_scenario("grid_wall")
    region = sc.knowledge.truth
    for x1 in (0, 1, 2, 3, 4):
        r1 = Setpoint(x1, 0)
        flags = [is_transitory_def2(sc.model, sc.costs, r1, region, Fraction(1, 10 ** k), sc.mpc.N)
                 for k in range(4)]
        seen = False
        for rep, k in zip(flags, range(4)):
            seen = seen or rep.is_transitory
            assert rep.is_transitory == seen or not seen
        # once transitory, a witness at the larger eps still works at every smaller eps
        for i, rep in enumerate(flags):
            if rep.is_transitory:
                for j in range(i + 1, 4):
                    assert flags[j].is_transitory
                    _check_witness_at(rep.witness, region, sc.costs, r1, Fraction(1, 10 ** j), sc.mpc.N)
                break


def _check_witness_at(w, region, costs, r1, eps, N):
    x, u = w.probe
    stage = lambda a, b, r: costs.stage(a, b, Setpoint(*r))  # noqa: E731
    r2 = w.setpoint
    lhs = eps * (costs.stage(x, u, r2) + brute_value(region.points, stage, x + u, (r2.x, r2.u), N - 1))
    rhs = eps * brute_value(region.points, stage, x, (r1.x, r1.u), N) + costs.offset(r1)
    assert lhs + costs.offset(r2) < rhs


# -- run verification -----------------------------------------------------------


@pytest.fixture(scope="module")
def toy_logs(toy):
    return {m: run_closed_loop(toy.with_mode(m)) for m in ("proposed", "no9j", "baseline")}


def test_verify_proposed_toy(toy, toy_logs):
    v = verify_run(toy_logs["proposed"], toy)
    assert v.ok, v.lines()
    assert list(v.checks) == list(CHECKS)
    assert toy_logs["proposed"][-1].x == 0


def test_verify_no9j_toy_reports_stuck(toy, toy_logs):
    sc = toy.with_mode("no9j")
    v = verify_run(toy_logs["no9j"], sc)
    for name in ("closed_loop_in_Z", "candidate_feasible", "knowledge_monotone", "shared_first_input"):
        assert v[name].passed
    assert not v["convergence"].passed
    assert "x=2" in v["convergence"].detail
    assert {c.name for c in v.failed()} == {"convergence"}


def test_corrupted_storage_fails_at_that_step(toy, toy_logs):
    logs = copy.deepcopy(toy_logs["proposed"])
    logs[4].S = -1.0
    v = verify_run(logs, toy)
    assert not v["storage_nonnegative"].passed
    assert v["storage_nonnegative"].step == 4 and v["storage_nonnegative"].magnitude == 1.0
    assert v["storage_recursion"].step == 4


def test_corrupted_input_breaks_shared_first_input(toy, toy_logs):
    logs = copy.deepcopy(toy_logs["proposed"])
    logs[0].pair.learning.inputs[0] = 1
    v = verify_run(logs, toy)
    assert v["shared_first_input"].step == 0


def test_out_of_set_pair_detected(toy, toy_logs):
    logs = copy.deepcopy(toy_logs["proposed"])
    logs[2].u = 3
    assert verify_run(logs, toy)["closed_loop_in_Z"].step == 2


def test_verify_is_pure(toy, toy_logs, tmp_path):
    logs = toy_logs["proposed"]
    before = copy.deepcopy(logs)
    a, b = verify_run(logs, toy), verify_run(logs, toy)
    assert a == b
    assert [s.to_dict() for s in logs] == [s.to_dict() for s in before]
    path = write_verdict(a, tmp_path / "verdict.txt")
    assert read_verdict(path) == a


def test_verify_empty_log_raises(toy):
    with pytest.raises(ValueError):
        verify_run([], toy)


def test_grid_scenarios_verify(rng):
    for name in ("grid_gap", "grid_wall"):
        sc = load_scenario(name)
        logs = run_closed_loop(sc)
        v = verify_run(logs, sc)
        assert v.ok, (name, v.lines())
        assert logs[-1].x == 4
