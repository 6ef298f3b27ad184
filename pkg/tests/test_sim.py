import copy
import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from safexplore.analysis import read_verdict, verify_run
from safexplore.cli import main
from safexplore.sim import (
    SHIPPED,
    LogFormatError,
    ScenarioError,
    compare_modes,
    export_plot_data,
    load_run,
    load_scenario,
    parse_scenario,
    read_log,
    run_closed_loop,
    write_log,
)

from helpers import random_grid_document

INVARIANTS = ("closed_loop_in_Z", "storage_nonnegative", "convergence_constraint", "storage_recursion",
              "plan_feasible", "shared_first_input", "candidate_feasible", "candidate_decrease",
              "knowledge_monotone")


def _plain(logs):
    out = []
    for s in logs:
        d = s.to_dict()
        d.pop("wall_ms")
        out.append(d)
    return out


@pytest.fixture(scope="module")
def car_short():
    sc = load_scenario("car_partially_unknown").with_overrides(max_steps=4)
    return sc, run_closed_loop(sc)


def test_shipped_scenarios_load():
    for name in SHIPPED:
        sc = load_scenario(name)
        assert sc.name == name
    car = load_scenario("car_partially_unknown")
    assert car.mpc.N == 50 and car.mpc.epsilon == 0.01 and car.mpc.alpha == 1.0
    assert len(car.knowledge.obstacles) == 4 and car.knowledge.sense_radius == 2.5
    assert car.model.sample_time == 0.2
    np.testing.assert_array_equal(car.costs.Q, np.diag([1, 1, 1e-5, 1e-5, 1e-5]))


@pytest.mark.parametrize("mutate, match", [
    (lambda d: d.pop("model"), "model"),
    (lambda d: d.update(model="boat"), "unknown model"),
    (lambda d: d["mpc"].update(horizon=3), "unknown"),
    (lambda d: d["mpc"].update(mode="sideways"), "mpc"),
    (lambda d: d["mpc"].update(alpha=2.0), "mpc"),
    (lambda d: d.update(x0=99), "outside"),
    (lambda d: d["finite"].update(safe=[[9, 9]]), "safe"),
    (lambda d: d.update(max_steps=0), "max_steps"),
    (lambda d: d["costs"].update(kind="cubic"), "cost kind"),
])
def test_scenario_errors(mutate, match):
    doc = random_grid_document(np.random.default_rng(1))
    mutate(doc)
    with pytest.raises(ScenarioError, match=match):
        parse_scenario(doc)


def test_continuous_scenario_errors():
    import tomli
    doc = tomli.loads(Path(load_scenario("car_partially_unknown").source).read_text())
    bad = copy.deepcopy(doc)
    bad["x0"] = [4.0, 0.0, 0.0, 0.0, 0.0]
    with pytest.raises(ScenarioError, match="outside"):
        parse_scenario(bad)
    bad = copy.deepcopy(doc)
    bad["environment"]["lower"] = bad["environment"]["lower"][:3]
    with pytest.raises(ScenarioError, match="entries"):
        parse_scenario(bad)
    bad = copy.deepcopy(doc)
    del bad["costs"]["Q"]
    with pytest.raises(ScenarioError, match="Q"):
        parse_scenario(bad)


def test_malformed_file(tmp_path):
    p = tmp_path / "broken.toml"
    p.write_text("model = \n")
    with pytest.raises(ScenarioError):
        load_scenario(p)
    with pytest.raises(ScenarioError, match="shipped"):
        load_scenario("no_such_scenario")


def test_log_round_trip_toy(toy, tmp_path):
    logs = run_closed_loop(toy)
    path = write_log(tmp_path / "steps.jsonl", logs, {"scenario": toy.name})
    header, back = read_log(path)
    assert header["scenario"] == toy.name
    assert [s.to_dict() for s in back] == [s.to_dict() for s in logs]
    assert math.isinf(back[0].F_hat)


def test_log_round_trip_car(car_short, tmp_path):
    sc, logs = car_short
    path = write_log(tmp_path / "steps.jsonl", logs)
    _, back = read_log(path)
    for a, b in zip(logs, back):
        assert a.to_dict() == b.to_dict()
        np.testing.assert_array_equal(a.x, b.x)
        for sa, sb in zip(a.pair.backup.states, b.pair.backup.states):
            np.testing.assert_array_equal(sa, sb)


def test_log_errors(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"step": 1}\n')
    with pytest.raises(LogFormatError, match="header"):
        read_log(p)
    p.write_text('{"header": {}}\n{"t": 0}\n')
    with pytest.raises(LogFormatError):
        read_log(p)
    p.write_text('{"header": {}}\nnot json\n')
    with pytest.raises(LogFormatError):
        read_log(p)


def test_export_car(car_short, tmp_path):
    sc, logs = car_short
    files = export_plot_data(logs, tmp_path, sc)
    with open(files["trajectory"], newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "x1", "x2", "x3", "x4", "x5", "u1", "u2", "y1", "y2", "S", "F_hat", "F_star"]
    assert len(rows) == len(logs) + 1
    assert rows[1][11] == "inf"
    assert float(rows[1][1]) == 1.5 and float(rows[2][1]) == pytest.approx(logs[1].x[0])
    geo = json.loads(files["geometry"].read_text())
    assert len(geo["obstacles"]) == 4 and geo["sense_radius"] == 2.5
    assert geo["box"]["upper"][0] == 12.0
    assert [g["t"] for g in geo["sensed"]] == [s.t for s in logs]


def test_export_finite(toy, tmp_path):
    logs = run_closed_loop(toy)
    files = export_plot_data(logs, tmp_path, toy)
    header = files["trajectory"].read_text().splitlines()[0]
    assert header == "t,x1,u1,y1,S,F_hat,F_star"
    geo = json.loads(files["geometry"].read_text())
    assert sorted(map(tuple, geo["finite"]["safe"])) == [(0, 0), (2, 0), (2, 2)]
    with pytest.raises(ValueError):
        export_plot_data([], tmp_path, toy)


@pytest.mark.parametrize("which", ["toy", "car"])
def test_replay_verdict_equals_live(which, toy, car_short, tmp_path):
    sc, logs = (toy, run_closed_loop(toy)) if which == "toy" else car_short
    live = verify_run(logs, sc)
    export_plot_data(logs, tmp_path, sc)
    sc2, logs2 = load_run(tmp_path)
    assert verify_run(logs2, sc2) == live


def test_short_car_run_invariants(car_short):
    sc, logs = car_short
    v = verify_run(logs, sc)
    for name in INVARIANTS:
        assert v[name].passed, v[name].line()
    assert logs[0].newly_discovered == (0, 1)


def test_determinism(toy, car_short):
    assert _plain(run_closed_loop(toy)) == _plain(run_closed_loop(toy))
    sc, logs = car_short
    assert _plain(run_closed_loop(sc)) == _plain(logs)


def test_compare_modes_toy(toy):
    rows = compare_modes(toy, ["proposed", "no9j", "baseline"])
    assert list(rows) == ["proposed", "no9j", "baseline"]
    assert rows["proposed"].final_output == (0,) and rows["no9j"].final_output == (2,)
    assert rows["baseline"].final_output == (0,)
    assert rows["no9j"].steps_to_convergence is None
    with pytest.raises(ValueError):
        compare_modes(toy, [])


def test_cli_run_and_verify(tmp_path):
    runner = CliRunner()
    out = tmp_path / "toy"
    res = runner.invoke(main, ["run", "counterexample.toy", "--out", str(out)])
    assert res.exit_code == 0, res.output
    assert "convergence PASS" in res.output
    for f in ("trajectory.csv", "geometry.json", "steps.jsonl", "verdict.txt"):
        assert (out / f).exists()
    res = runner.invoke(main, ["verify", str(out)])
    assert res.exit_code == 0
    assert read_verdict(out / "verdict.txt").ok

    stuck = tmp_path / "stuck"
    res = runner.invoke(main, ["run", "counterexample.toy", "--mode", "no9j", "--steps", "12", "--out", str(stuck)])
    assert res.exit_code == 0 and "convergence FAIL" in res.output
    res = runner.invoke(main, ["verify", str(stuck)])
    assert res.exit_code == 1


def test_cli_verdict_format(tmp_path):
    out = tmp_path / "gap"
    CliRunner().invoke(main, ["run", "grid_gap", "--out", str(out)])
    for line in (out / "verdict.txt").read_text().splitlines():
        head = line.split(" # ")[0].split()
        assert head[1] in ("PASS", "FAIL")
        if len(head) > 2:
            int(head[2]), float(head[3])


def test_cli_compare_and_transitory():
    runner = CliRunner()
    res = runner.invoke(main, ["compare", "counterexample.toy", "--modes", "proposed,no9j"])
    assert res.exit_code == 0
    lines = res.output.splitlines()
    assert lines[0].split()[:2] == ["mode", "final"]
    assert lines[1].startswith("proposed") and lines[2].startswith("no9j")
    res = runner.invoke(main, ["compare", "counterexample.toy", "--modes", "proposed,fast"])
    assert res.exit_code != 0
    res = runner.invoke(main, ["transitory", "grid_wall", "--eps", "1"])
    assert "not transitory" in res.output
    res = runner.invoke(main, ["transitory", "grid_wall", "--eps", "0.1"])
    assert ": transitory" in res.output and "witness" in res.output
    res = runner.invoke(main, ["transitory", "car_partially_unknown"])
    assert res.exit_code != 0


def test_cli_unknown_scenario():
    res = CliRunner().invoke(main, ["run", "nowhere"])
    assert res.exit_code != 0 and "shipped" in res.output


def test_random_grids_keep_invariants():
    rng = np.random.default_rng(7)
    for i in range(10):
        sc = parse_scenario(random_grid_document(rng, i))
        logs = run_closed_loop(sc)
        v = verify_run(logs, sc)
        for name in INVARIANTS:
            assert v[name].passed, (i, v[name].line())
