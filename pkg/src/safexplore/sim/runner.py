"""Closed-loop simulation, mode comparison and plot-data export."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from pathlib import Path

import numpy as np

from ..environment import SafetyBreach, contains, is_steady_admissible, sense, update_knowledge
from ..mpc import (
    Mode,
    StorageState,
    TargetCache,
    candidate_shift,
    control_step,
    goal_seed,
    initial_candidate,
)
from .config import ScenarioConfig, parse_scenario
from .log import StepLog, read_log, write_log

__all__ = ["RunAborted", "run_closed_loop", "compare_modes", "export_plot_data", "load_run",
           "scenario_document", "ComparisonRow", "CONVERGED_STAGE", "CONVERGED_WINDOW"]

log = logging.getLogger(__name__)

CONVERGED_STAGE = 1e-8
CONVERGED_WINDOW = 10


class RunAborted(RuntimeError):
    """A run stopped on a breach; ``logs`` holds every completed step."""

    def __init__(self, message, logs, cause):
        super().__init__(message)
        self.logs = logs
        self.cause = cause


def _zero_input(model):
    return np.zeros(model.input_dim)


def run_closed_loop(scenario: ScenarioConfig, on_step=None) -> list:
    """Simulate until convergence or ``max_steps``; returns the step logs.

    Each step senses at the current state, updates the knowledge, solves,
    applies the shared first input and records a :class:`StepLog`.  A run
    stops early once the stage cost toward the backup setpoint has stayed
    below ``CONVERGED_STAGE`` for ``CONVERGED_WINDOW`` steps at an
    admissible setpoint.
    """
    model, cfg = scenario.model, scenario.mpc
    k = scenario.knowledge
    x = scenario.x0
    storage = StorageState.initial(cfg)
    warm, prev = None, None
    u_prev = None if model.discrete else _zero_input(model)
    cache = TargetCache(seed=cfg.seed)
    phase = 0
    settled = 0
    logs = []
    for t in range(scenario.max_steps):
        t0 = time.perf_counter()
        costs = scenario.costs_at(t)
        if scenario.phase_at(t) != phase:
            # a goal change invalidates the stored cost bounds and the target cache
            phase = scenario.phase_at(t)
            storage = StorageState.initial(cfg)
            cache = TargetCache(seed=cfg.seed)
        try:
            if model.discrete:
                center, found = (), ()
            else:
                report = sense(k, (x, u_prev))
                k = update_knowledge(k, report)
                center, found = report.center, tuple(sorted(report.newly_discovered))
            if warm is None and not model.discrete:
                warm = initial_candidate(model, k, cfg, costs, x)
            seeds = []
            if not model.discrete and warm is not None:
                gs = goal_seed(model, k, cfg, costs, x, warm, cache)
                if gs is not None:
                    seeds.append(gs)
            u, sol, new_storage = control_step(model, k, cfg, costs, storage, x, warm, prev, seeds=seeds)
            z = (x, u) if model.discrete else np.concatenate([x, u])
            if not contains(k.truth, z):
                raise SafetyBreach(f"applied pair at t={t} leaves the constraint set")
        except Exception as exc:  # noqa: BLE001 - every breach aborts with the log kept
            raise RunAborted(f"run aborted at t={t}: {exc}", logs, exc) from exc
        rec = StepLog(
            t=t, x=x, u=u, y=model.output(x, u) if not model.discrete else model.output_fn(x, u),
            S=storage.S, F_hat=storage.F_hat, F_star=sol.F_star, objective=sol.objective, stage0=sol.stage0,
            pair=sol.pair, sensed_center=tuple(center), newly_discovered=found, solver_status=sol.solver_status,
            wall_ms=(time.perf_counter() - t0) * 1e3, discrete=model.discrete,
        )
        logs.append(rec)
        if on_step is not None:
            on_step(rec)
        log.debug("t=%d status=%s F*=%.6g S=%.6g", t, sol.solver_status, sol.F_star, storage.S)
        r = sol.pair.backup_setpoint
        if costs.stage(x, u, r) < CONVERGED_STAGE and is_steady_admissible(model, r, k.truth, 0.0):
            settled += 1
        else:
            settled = 0
        if settled >= CONVERGED_WINDOW:
            break
        x = model.step(x, u)
        prev, storage, u_prev = sol, new_storage, u
        warm = candidate_shift(model, sol, x)
    return logs


@dataclasses.dataclass(frozen=True)
class ComparisonRow:
    mode: str
    final_output: tuple
    final_offset: float
    steps: int
    steps_to_convergence: object
    total_stage_cost: float


def _summary(scenario, logs) -> ComparisonRow:
    model = scenario.model
    last = logs[-1]
    costs = scenario.costs_at(last.t)
    r = last.pair.backup_setpoint
    stages = [float(scenario.costs_at(s.t).stage(s.x, s.u, s.pair.backup_setpoint)) for s in logs]
    conv = None
    for i in range(len(stages)):
        if all(v < CONVERGED_STAGE for v in stages[i:]) and len(stages) - i >= CONVERGED_WINDOW:
            conv = logs[i].t
            break
    y = last.y
    fo = tuple(float(v) for v in np.atleast_1d(y)) if not model.discrete else (y,)
    total = float(sum(stages))
    return ComparisonRow(scenario.mpc.mode.value, fo, float(costs.offset(r, model.output_fn)), len(logs), conv,
                         total)


def compare_modes(scenario: ScenarioConfig, modes) -> dict:
    """Run the scenario once per mode; rows are keyed by mode in the given order."""
    modes = [Mode.parse(m) for m in modes]
    if not modes:
        raise ValueError("need at least one mode")
    out = {}
    for m in modes:
        sc = scenario.with_mode(m)
        out[m.value] = _summary(sc, run_closed_loop(sc))
    return out


# -- files -------------------------------------------------------------------


def _jsonify_doc(v):
    if isinstance(v, dict):
        return {k: _jsonify_doc(a) for k, a in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonify_doc(a) for a in v]
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else "-inf"
    return v


def _unjsonify_doc(v):
    if isinstance(v, dict):
        return {k: _unjsonify_doc(a) for k, a in v.items()}
    if isinstance(v, list):
        return [_unjsonify_doc(a) for a in v]
    if v == "inf":
        return math.inf
    if v == "-inf":
        return -math.inf
    return v


def scenario_document(scenario: ScenarioConfig) -> dict:
    """The scenario as a plain document with the effective MPC settings folded in."""
    doc = json.loads(json.dumps(_jsonify_doc(scenario.raw)))
    mpc = {}
    for f in dataclasses.fields(scenario.mpc):
        v = getattr(scenario.mpc, f.name)
        if v is None:
            continue
        if isinstance(v, Mode):
            v = v.value
        if f.name == "setpoints":
            v = [list(p) for p in v]
        mpc[f.name] = v
    doc["mpc"] = mpc
    doc["max_steps"] = scenario.max_steps
    doc["seed"] = scenario.seed
    return doc


def _header(scenario: ScenarioConfig) -> dict:
    return {"scenario": scenario.name, "mode": scenario.mpc.mode.value, "seed": scenario.seed,
            "document": scenario_document(scenario)}


def _columns(model, y_dim):
    n, m = model.state_dim, model.input_dim
    return (["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)]
            + [f"y{i + 1}" for i in range(y_dim)] + ["S", "F_hat", "F_star"])


def export_plot_data(logs, path, scenario: ScenarioConfig) -> dict:
    """Write ``trajectory.csv``, ``geometry.json`` and the replayable ``steps.jsonl`` into ``path``."""
    logs = list(logs)
    if not logs:
        raise ValueError("nothing to export")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    model = scenario.model
    y_dim = len(np.atleast_1d(logs[0].y))
    traj = out / "trajectory.csv"
    with open(traj, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(_columns(model, y_dim))
        for s in logs:
            vals = [s.t] + [_fmt(v) for v in np.atleast_1d(s.x)] + [_fmt(v) for v in np.atleast_1d(s.u)]
            vals += [_fmt(v) for v in np.atleast_1d(s.y)] + [_fmt(s.S), _fmt(s.F_hat), _fmt(s.F_star)]
            w.writerow(vals)
    k = scenario.knowledge
    geometry = {"scenario": scenario.name}
    if k.is_static:
        geometry["finite"] = {name: sorted(list(p) for p in reg.points)
                              for name, reg in (("truth", k.truth), ("safe", k.safe), ("estimated", k.estimated))}
    else:
        geometry["box"] = {"lower": _jsonify_doc(list(k.base.lower)), "upper": _jsonify_doc(list(k.base.upper))}
        geometry["obstacles"] = [{"center": list(o.center), "radius": o.radius} for o in k.obstacles]
        geometry["sense_radius"] = k.sense_radius
        geometry["sensed"] = [{"t": s.t, "center": list(s.sensed_center), "discovered": list(s.newly_discovered)}
                              for s in logs]
    geo = out / "geometry.json"
    geo.write_text(json.dumps(geometry, indent=1, allow_nan=False) + "\n", encoding="utf-8")
    steps = write_log(out / "steps.jsonl", logs, _header(scenario))
    return {"trajectory": traj, "geometry": geo, "steps": steps}


def _fmt(v):
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    return repr(v) if math.isfinite(v) else ("inf" if v > 0 else "-inf")


def load_run(path):
    """Parse an exported run directory (or a ``steps.jsonl``) into ``(scenario, logs)``."""
    p = Path(path)
    if p.is_dir():
        p = p / "steps.jsonl"
    header, logs = read_log(p)
    if "document" not in header:
        raise ValueError(f"{p}: header lacks the scenario document")
    scenario = parse_scenario(_unjsonify_doc(header["document"]), header.get("scenario", ""))
    return scenario, logs
