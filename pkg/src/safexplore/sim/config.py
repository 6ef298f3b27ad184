"""Scenario files: TOML documents describing one closed-loop experiment.

Schema (all sections optional unless noted)::

    name = "car"                  # free text
    model = "bicycle"             # required: bicycle | toy | integrator
    max_steps = 150
    seed = 0
    x0 = [1.5, 0, 0, 5, 0]        # required

    [model_params]                # bicycle only
    l_r = 1.7
    sample_time = 0.2

    [mpc]                         # every MpcConfig field, e.g. N, epsilon, mode, S0
    setpoints = [[0, 0]]          # finite models: restrict the steady pairs

    [costs]                       # continuous: Q, R, P (diagonals or matrices), y_desired
    kind = "tabular"              # finite: tabular | grid
    table = [[x, u, cost], ...]   # tabular stage costs
    offset = [[x, u, cost], ...]  # tabular offset costs (default 0)
    q = 1                         # grid weights and goal
    r = 1
    p = 1
    y_desired = 0

    [environment]                 # continuous sensed environment
    lower = [...]                 # box on (x, u); TOML accepts inf and -inf
    upper = [...]
    sense_radius = 2.5
    obstacles = [{center = [4, 0.3], radius = 0.51}, ...]

    [finite]                      # finite models: explicit (x, u) pairs
    truth = [[x, u], ...]
    safe = [[x, u], ...]
    estimated = [[x, u], ...]     # defaults to truth

    [[events]]                    # timed goal changes (continuous only)
    t = 40
    y_desired = [10, 0]

    [transitory]                  # grid scenarios used by the transitory command
    setpoint = [x, u]
    definition = 2
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

import numpy as np

try:
    import tomllib as _toml
except ModuleNotFoundError:  # Python < 3.11
    import tomli as _toml

from ..costs import CostConfig, GridCost, TabularCost
from ..dynamics import BicycleParams, SystemModel, bicycle_model, integrator_model, toy_model
from ..environment import FinitePointSet, HyperBox, KnowledgeState, OutputDisk, contains
from ..mpc import Mode, MpcConfig

__all__ = ["ScenarioConfig", "ScenarioError", "load_scenario", "parse_scenario", "shipped_scenario",
           "SHIPPED"]

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"
SHIPPED = ("counterexample.toy", "car_partially_unknown", "grid_gap", "grid_wall")


class ScenarioError(ValueError):
    """The scenario document is malformed or inconsistent."""


@dataclass
class ScenarioConfig:
    name: str
    model: SystemModel
    knowledge: KnowledgeState
    x0: Any
    costs: Any
    mpc: MpcConfig
    max_steps: int = 100
    seed: int = 0
    events: tuple = ()
    transitory: Optional[dict] = None
    source: str = ""
    raw: dict = field(default_factory=dict)

    def with_mode(self, mode) -> "ScenarioConfig":
        return replace(self, mpc=replace(self.mpc, mode=Mode.parse(mode)))

    def with_overrides(self, **kw) -> "ScenarioConfig":
        mpc_fields = {f.name for f in dataclasses.fields(MpcConfig)}
        mpc_kw = {k: v for k, v in kw.items() if k in mpc_fields and v is not None}
        top = {k: v for k, v in kw.items() if k not in mpc_fields and v is not None}
        out = replace(self, **top)
        if mpc_kw:
            out = replace(out, mpc=replace(out.mpc, **mpc_kw))
        return out

    def phase_at(self, t: int) -> int:
        """Number of goal events that have fired by step ``t``."""
        return sum(1 for ev in self.events if ev["t"] <= t)

    def costs_at(self, t: int):
        """Cost configuration in force at step ``t`` (goal events applied)."""
        costs = self.costs
        for ev in self.events:
            if ev["t"] <= t:
                costs = replace(costs, y_desired=np.asarray(ev["y_desired"], dtype=float))
        return costs


def _pairs(rows, what):
    try:
        return FinitePointSet.of((int(a), int(b)) for a, b in rows)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{what} must be a list of integer [x, u] pairs") from exc


def _matrix(v, dim, what):
    a = np.asarray(v, dtype=float)
    if a.ndim == 1:
        a = np.diag(a)
    if a.shape != (dim, dim):
        raise ScenarioError(f"{what} must be {dim}x{dim} or a length-{dim} diagonal")
    return a


def _mpc_config(section: dict, N_default: int) -> MpcConfig:
    known = {f.name for f in dataclasses.fields(MpcConfig)}
    unknown = set(section) - known
    if unknown:
        raise ScenarioError(f"unknown [mpc] keys: {sorted(unknown)}")
    kw = dict(section)
    kw.setdefault("N", N_default)
    if "setpoints" in kw:
        kw["setpoints"] = tuple((int(a), int(b)) for a, b in kw["setpoints"])
    try:
        return MpcConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"invalid [mpc] section: {exc}") from exc


def _continuous(doc, name):
    params = BicycleParams(**doc.get("model_params", {}))
    model = bicycle_model(params)
    n, m = model.state_dim, model.input_dim
    env = doc.get("environment")
    if env is None:
        raise ScenarioError("continuous scenarios need an [environment] section")
    lower, upper = tuple(float(v) for v in env["lower"]), tuple(float(v) for v in env["upper"])
    if len(lower) != n + m:
        raise ScenarioError(f"environment box must have {n + m} entries")
    obstacles = tuple(OutputDisk(tuple(float(c) for c in o["center"]), float(o["radius"]), "outside")
                      for o in env.get("obstacles", ()))
    mpc = _mpc_config(doc.get("mpc", {}), 50)
    knowledge = KnowledgeState(base=HyperBox(lower, upper), obstacles=obstacles,
                               sense_radius=float(env.get("sense_radius", 2.5)), lambda_margin=mpc.lam)
    c = doc.get("costs", {})
    try:
        costs = CostConfig(_matrix(c["Q"], n, "Q"), _matrix(c.get("R", [1.0] * m), m, "R"),
                           _matrix(c.get("P", [1.0] * model.output_dim), model.output_dim, "P"),
                           np.asarray(c["y_desired"], dtype=float), mpc.N)
    except KeyError as exc:
        raise ScenarioError(f"[costs] is missing {exc}") from exc
    x0 = np.asarray(doc["x0"], dtype=float)
    if x0.shape != (n,):
        raise ScenarioError(f"x0 must have {n} entries")
    if not contains(knowledge.truth, np.concatenate([x0, np.zeros(m)])):
        raise ScenarioError("initial state lies outside the constraint set")
    events = tuple(sorted(({"t": int(e["t"]), "y_desired": [float(v) for v in e["y_desired"]]}
                           for e in doc.get("events", ())), key=lambda e: e["t"]))
    for e in events:
        if len(e["y_desired"]) != model.output_dim:
            raise ScenarioError("event goal has the wrong dimension")
    return model, knowledge, x0, costs, mpc, events


def _finite(doc, name):
    model = toy_model() if doc["model"] == "toy" else integrator_model()
    fin = doc.get("finite")
    if fin is None:
        raise ScenarioError("finite scenarios need a [finite] section")
    truth = _pairs(fin["truth"], "truth")
    safe = _pairs(fin["safe"], "safe")
    est = _pairs(fin.get("estimated", fin["truth"]), "estimated")
    if not safe.points <= est.points <= truth.points:
        raise ScenarioError("finite sets must satisfy safe <= estimated <= truth")
    mpc = _mpc_config(doc.get("mpc", {}), 3)
    c = doc.get("costs", {})
    kind = c.get("kind", "grid")
    if kind == "tabular":
        table = {(int(a), int(b)): v for a, b, v in c["table"]}
        missing = truth.points - set(table)
        if missing:
            raise ScenarioError(f"tabular costs miss pairs {sorted(missing)}")
        offset = {(int(a), int(b)): v for a, b, v in c["offset"]} if "offset" in c else None
        costs = TabularCost(table, offset_table=offset, N=mpc.N)
    elif kind == "grid":
        costs = GridCost(q=c.get("q", 1), r=c.get("r", 1), p=c.get("p", 1), y_desired=c.get("y_desired", 0),
                         N=mpc.N)
    else:
        raise ScenarioError(f"unknown cost kind {kind!r}")
    x0 = int(doc["x0"])
    if not any(x == x0 for (x, _) in truth.points):
        raise ScenarioError("initial state lies outside the constraint set")
    knowledge = KnowledgeState(static_truth=truth, static_safe=safe, static_estimated=est)
    if doc.get("events"):
        raise ScenarioError("finite scenarios do not support goal events")
    return model, knowledge, x0, costs, mpc, ()


def parse_scenario(doc: dict, source: str = "") -> ScenarioConfig:
    if "model" not in doc:
        raise ScenarioError("scenario needs a 'model' key")
    if "x0" not in doc:
        raise ScenarioError("scenario needs an 'x0' key")
    name = str(doc.get("name", Path(source).stem if source else "scenario"))
    kind = doc["model"]
    if kind == "bicycle":
        parts = _continuous(doc, name)
    elif kind in ("toy", "integrator"):
        parts = _finite(doc, name)
    else:
        raise ScenarioError(f"unknown model {kind!r}")
    model, knowledge, x0, costs, mpc, events = parts
    max_steps = int(doc.get("max_steps", 100))
    if max_steps < 1:
        raise ScenarioError("max_steps must be positive")
    tr = doc.get("transitory")
    if tr is not None:
        tr = {"setpoint": tuple(int(v) for v in tr["setpoint"]), "definition": int(tr.get("definition", 2)),
              "epsilon": tr.get("epsilon")}
    return ScenarioConfig(name=name, model=model, knowledge=knowledge, x0=x0, costs=costs, mpc=mpc,
                          max_steps=max_steps, seed=int(doc.get("seed", mpc.seed)), events=events,
                          transitory=tr, source=source, raw=doc)


def load_scenario(path) -> ScenarioConfig:
    """Load a scenario from a file path or the name of a shipped scenario."""
    p = Path(path)
    if not p.exists():
        p = shipped_scenario(str(path))
    with open(p, "rb") as fh:
        try:
            doc = _toml.load(fh)
        except _toml.TOMLDecodeError as exc:
            raise ScenarioError(f"{p}: {exc}") from exc
    return parse_scenario(doc, str(p))


def shipped_scenario(name: str) -> Path:
    stem = name[:-5] if name.endswith(".toml") else name
    p = SCENARIO_DIR / f"{stem}.toml"
    if not p.exists():
        raise ScenarioError(f"no scenario file {name!r}; shipped: {', '.join(SHIPPED)}")
    return p
