"""Offline checks of the closed-loop guarantees, replayed from a run log.

Every check recomputes its quantity from logged trajectories and the
scenario definition; nothing reported by the solver is taken on trust.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from ..costs import tracking_cost
from ..environment import contains, contains_with_margin, is_steady_admissible
from ..mpc import Mode, ModelInconsistency, StorageState, audit_plan, candidate_shift
from ..mpc.types import MpcSolution

__all__ = ["CheckResult", "RunVerdict", "verify_run", "write_verdict", "read_verdict", "CHECKS"]

TOL = 1e-9
WINDOW = 10
CONVERGED_STAGE = 1e-8

CHECKS = (
    "closed_loop_in_Z",
    "storage_nonnegative",
    "convergence_constraint",
    "storage_recursion",
    "plan_feasible",
    "shared_first_input",
    "candidate_feasible",
    "candidate_decrease",
    "knowledge_monotone",
    "convergence",
    "boundary",
)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    step: Optional[int] = None
    magnitude: Optional[float] = None
    detail: str = ""
    skipped: bool = False

    def line(self) -> str:
        parts = [self.name, "PASS" if self.passed else "FAIL"]
        if self.step is not None:
            parts.append(str(self.step))
        if self.magnitude is not None:
            parts.append(repr(float(self.magnitude)))
        if self.detail:
            parts.append(f"# {self.detail}")
        elif self.skipped:
            parts.append("# not applicable")
        return " ".join(parts)


@dataclass
class RunVerdict:
    checks: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def __getitem__(self, name) -> CheckResult:
        return self.checks[name]

    def failed(self) -> list:
        return [c for c in self.checks.values() if not c.passed]

    def lines(self) -> list:
        return [c.line() for c in self.checks.values()]

    def __eq__(self, other):
        return isinstance(other, RunVerdict) and self.lines() == other.lines()


class _Tracker:
    """First violation and the worst magnitude seen for one check."""

    def __init__(self, name):
        self.name, self.step, self.worst, self.detail = name, None, 0.0, ""
        self.skipped = True

    def visit(self):
        self.skipped = False

    def fail(self, t, magnitude, detail=""):
        self.skipped = False
        if self.step is None:
            self.step, self.detail = t, detail
        if magnitude > self.worst or math.isnan(self.worst):
            self.worst = magnitude

    def result(self) -> CheckResult:
        if self.step is None:
            return CheckResult(self.name, True, skipped=self.skipped)
        return CheckResult(self.name, False, self.step, self.worst, self.detail)


def _z(x, u, discrete):
    if discrete:
        return (x, u)
    return np.concatenate([np.atleast_1d(x), np.atleast_1d(u)]).astype(float)


def _same(a, b, discrete) -> bool:
    if discrete:
        return a == b
    return bool(np.array_equal(np.asarray(a, dtype=float), np.asarray(b, dtype=float)))


def _knowledge_at(k0, logs, t):
    # sensing at step t happens before the solve, so its report is included
    k = k0
    if k.is_static:
        return k
    centers = []
    disc = set()
    for s in logs[: t + 1]:
        if s.sensed_center and tuple(s.sensed_center) not in centers:
            centers.append(tuple(s.sensed_center))
        disc |= set(s.newly_discovered)
    return replace(k, sensed_centers=tuple(centers), discovered=frozenset(disc))


def verify_run(logs, scenario, conv_tol: float = CONVERGED_STAGE, window: int = WINDOW) -> RunVerdict:
    """Replay every closed-loop guarantee against a log.

    ``scenario`` supplies the model, the initial knowledge, the MPC
    configuration and ``costs_at(t)``.  The result lists one record per
    check in :data:`CHECKS`, each with the first violating step and the
    largest violation magnitude.
    """
    logs = list(logs)
    if not logs:
        raise ValueError("cannot verify an empty log")
    model, cfg, k0 = scenario.model, scenario.mpc, scenario.knowledge
    disc = model.discrete
    tr = {name: _Tracker(name) for name in CHECKS}
    proposed = cfg.mode == Mode.PROPOSED

    prev_sol = None
    prev_k = None
    for i, s in enumerate(logs):
        t = s.t
        costs = scenario.costs_at(t)
        k = _knowledge_at(k0, logs, t)
        z = _z(s.x, s.u, disc)

        tr["closed_loop_in_Z"].visit()
        if not contains(k.truth, z):
            tr["closed_loop_in_Z"].fail(t, 1.0 if disc else _violation(k.truth, z))

        # without the convergence constraint nothing keeps the storage nonnegative
        if proposed:
            tr["storage_nonnegative"].visit()
            if s.S < -TOL:
                tr["storage_nonnegative"].fail(t, -s.S)

        active = proposed and math.isfinite(s.F_hat)
        if active:
            tr["convergence_constraint"].visit()
            excess = s.F_star - (s.S + s.F_hat)
            if excess > TOL:
                tr["convergence_constraint"].fail(t, excess)

        if i > 0:
            p = logs[i - 1]
            tr["storage_recursion"].visit()
            exp_F = p.F_star - cfg.epsilon * cfg.alpha * p.stage0
            exp_S = p.S + p.F_hat - p.F_star if math.isfinite(p.F_hat) else p.S
            gap = max(abs(s.F_hat - exp_F), abs(s.S - exp_S))
            if not gap <= TOL * (1 + abs(exp_F) + abs(exp_S)):
                tr["storage_recursion"].fail(t, gap)

        storage = StorageState(S=s.S, F_hat=s.F_hat)
        audit = audit_plan(model, k, cfg, costs, storage, s.x, s.pair, active)
        tr["plan_feasible"].visit()
        if not audit.ok:
            mag = max((v for kk, v in audit.residuals.items() if kk in audit.failures), default=math.inf)
            tr["plan_feasible"].fail(t, mag, ",".join(audit.failures))
        else:
            fgap = abs(audit.F_backup - s.F_star)
            if not fgap <= 1e-7 * (1 + abs(s.F_star)):
                tr["plan_feasible"].fail(t, fgap, "logged F* differs from the plan")

        tr["shared_first_input"].visit()
        L, B = s.pair.learning, s.pair.backup
        if not (_same(L.inputs[0], B.inputs[0], disc) and _same(B.inputs[0], s.u, disc)):
            tr["shared_first_input"].fail(t, 1.0 if disc else float(np.max(np.abs(
                np.asarray(L.inputs[0]) - np.asarray(B.inputs[0])))))

        if prev_sol is not None:
            tr["candidate_feasible"].visit()
            tr["candidate_decrease"].visit()
            try:
                cand = candidate_shift(model, prev_sol, s.x)
            except ModelInconsistency as exc:
                tr["candidate_feasible"].fail(t, math.inf, str(exc))
                cand = None
            if cand is not None:
                ca = audit_plan(model, k, cfg, costs, storage, s.x, cand, active)
                if not ca.ok:
                    mag = max((v for kk, v in ca.residuals.items() if kk in ca.failures), default=math.inf)
                    tr["candidate_feasible"].fail(t, mag, ",".join(ca.failures))
                p = logs[i - 1]
                r = cand.backup_setpoint
                F_cand = cfg.epsilon * tracking_cost(costs, cand.backup, r, cfg.N) + costs.offset(r, model.output_fn)
                bound = p.F_star - cfg.epsilon * p.stage0
                excess = F_cand - bound
                if excess > TOL * (1 + abs(bound)):
                    tr["candidate_decrease"].fail(t, excess)

        if prev_k is not None and not k.is_static:
            tr["knowledge_monotone"].visit()
            if not (set(prev_k.sensed_centers) <= set(k.sensed_centers) and prev_k.discovered <= k.discovered):
                tr["knowledge_monotone"].fail(t, 1.0)
        elif prev_k is not None:
            tr["knowledge_monotone"].visit()

        prev_sol = MpcSolution(pair=s.pair, objective=s.objective, F_star=s.F_star, solver_status=s.solver_status,
                               stage0=s.stage0)
        prev_k = k

    _check_convergence(tr, logs, scenario, conv_tol, window)
    return RunVerdict({name: tr[name].result() for name in CHECKS})


def _violation(region, z):
    from ..environment import region_violation

    return region_violation(region, z)


def _check_convergence(tr, logs, scenario, conv_tol, window):
    model, cfg = scenario.model, scenario.mpc
    disc = model.discrete
    last = logs[-1]
    t_end = last.t
    costs = scenario.costs_at(t_end)
    k = _knowledge_at(scenario.knowledge, logs, t_end)
    tail = logs[-window:]
    stages = [costs.stage(s.x, s.u, s.pair.backup_setpoint) for s in tail]
    worst = max(float(v) for v in stages)
    r = last.pair.backup_setpoint
    c = tr["convergence"]
    c.visit()
    where = f"final x={last.x!r}" if disc else f"final y={np.round(np.asarray(last.y, dtype=float), 4).tolist()}"
    if len(logs) < window:
        c.fail(t_end, worst, f"only {len(logs)} steps; {where}")
    elif not worst < conv_tol:
        c.fail(tail[0].t, worst, f"stage cost not settled; {where}")
    elif not is_steady_admissible(model, r, k.truth, 0.0):
        c.fail(t_end, math.inf, f"limit setpoint not admissible; {where}")

    b = tr["boundary"]
    if disc or c.step is not None:
        return
    # the limit setpoint must sit on the edge of the admissible manifold:
    # admissible at a fraction of lambda but not at lambda itself
    b.visit()
    lam = cfg.lam
    inner = contains_with_margin(k.truth, r.z(), lam / 2)
    outer = contains_with_margin(k.truth, r.z(), lam * 4)
    if not inner or outer:
        b.fail(t_end, lam, "limit setpoint is interior" if outer else "limit setpoint violates the margin")


def write_verdict(verdict: RunVerdict, path) -> Path:
    """One line per check: ``NAME PASS|FAIL [step] [magnitude] [# detail]``."""
    path = Path(path)
    path.write_text("\n".join(verdict.lines()) + "\n", encoding="utf-8")
    return path


def read_verdict(path) -> RunVerdict:
    checks = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        head, _, detail = line.partition(" # ")
        parts = head.split()
        if len(parts) < 2 or parts[1] not in ("PASS", "FAIL"):
            raise ValueError(f"malformed verdict line {line!r}")
        step = int(parts[2]) if len(parts) > 2 else None
        mag = float(parts[3]) if len(parts) > 3 else None
        skipped = detail == "not applicable"
        checks[parts[0]] = CheckResult(parts[0], parts[1] == "PASS", step, mag, "" if skipped else detail, skipped)
    return RunVerdict(checks)
