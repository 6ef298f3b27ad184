"""Transitory-setpoint predicates on finite constraint sets.

Both predicates quantify over probe pairs ``(x, u)`` of the region whose
optimal tracking cost toward ``r1`` is at most ``delta``.  Optimal costs are
computed exactly by dynamic programming, so the verdicts are exact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from ..costs import NoSteadySetpoint
from ..dynamics import SystemModel
from ..environment import FinitePointSet, Setpoint, is_steady_admissible
from ..solver.discrete import value_function

__all__ = ["TransitoryReport", "Witness", "is_transitory_def1", "is_transitory_def2", "delta_ladder",
           "steady_setpoints"]


@dataclass(frozen=True)
class Witness:
    probe: tuple
    setpoint: Setpoint
    plan: tuple
    lhs: object
    rhs: object

    @property
    def gap(self):
        return self.rhs - self.lhs


@dataclass
class TransitoryReport:
    setpoint: Setpoint
    is_transitory: bool
    witness: Optional[Witness]
    delta_used: float
    probe_points: int
    witnesses: list = field(default_factory=list)
    failing_probe: Optional[tuple] = None


def steady_setpoints(model: SystemModel, region: FinitePointSet) -> list:
    pts = [Setpoint(x, u) for (x, u) in sorted(region.points)
           if is_steady_admissible(model, Setpoint(x, u), region, 0.0)]
    if not pts:
        raise NoSteadySetpoint("region has no steady pair")
    return pts


class _Values:
    """Memoized ``V*_k(x, r)`` for every steady ``r`` of the region."""

    def __init__(self, model, region, costs, N):
        self.model, self.region, self.costs, self.N = model, region, costs, N
        self._fns = {}

    def __call__(self, x, r: Setpoint, steps: int):
        if r not in self._fns:
            self._fns[r] = value_function(self.model, self.region, self.costs, r, self.N)
        return self._fns[r](x, steps)


def delta_ladder(values) -> list:
    """Candidate deltas: half the smallest positive cost, 1.5 times it, then every larger cost."""
    pos = sorted({v for v in values if v > 0 and math.isfinite(v)})
    if not pos:
        return [1.0]
    ladder = {pos[0] / 2, pos[0] * 3 / 2} | set(pos[1:])
    return sorted(ladder)


def _check(model, costs, r1, region, epsilon, N, def2: bool):
    if not isinstance(region, FinitePointSet):
        raise TypeError("transitory checks need a finite region")
    manifold = steady_setpoints(model, region)
    V = _Values(model, region, costs, N)
    out = model.output_fn
    T1 = costs.offset(r1, out)
    probes = []
    for (x, u) in sorted(region.points):
        v1, _ = V(x, r1, N)
        if math.isfinite(v1):
            probes.append(((x, u), v1))

    def witness_for(probe, v1):
        x, u = probe
        rhs = epsilon * v1 + T1
        best = None
        for r2 in manifold:
            if r2 == r1:
                continue
            T2 = costs.offset(r2, out)
            if def2:
                if not T2 < T1:
                    continue
                tail, seq = V(model.step(x, u), r2, N - 1)
                if seq is None:
                    continue
                lhs = epsilon * (costs.stage(x, u, r2) + tail) + T2
                plan = (u,) + seq
            else:
                val, seq = V(x, r2, N)
                if seq is None:
                    continue
                lhs = epsilon * val + T2
                plan = seq
            if lhs < rhs and (best is None or lhs < best.lhs):
                best = Witness(probe, r2, plan, lhs, rhs)
        return best

    ladder = delta_ladder([v for _, v in probes])
    passing, witnesses, failing = None, [], None
    cache = {}
    for delta in ladder:
        ok = True
        for probe, v1 in probes:
            if v1 > delta:
                continue
            if probe not in cache:
                cache[probe] = witness_for(probe, v1)
            if cache[probe] is None:
                ok = False
                failing = probe
                break
        if not ok:
            break
        passing = delta
        witnesses = [cache[p] for p, v1 in probes if v1 <= delta]
    transitory = passing is not None
    return TransitoryReport(
        setpoint=r1,
        is_transitory=transitory,
        witness=witnesses[0] if witnesses else None,
        delta_used=passing if transitory else ladder[0],
        probe_points=sum(1 for _, v in probes if v <= (passing if transitory else ladder[0])),
        witnesses=witnesses,
        failing_probe=None if transitory and failing is None else failing,
    )


def is_transitory_def1(model: SystemModel, costs, r1: Setpoint, region: FinitePointSet, epsilon, N: int,
                       delta=None) -> TransitoryReport:
    """Whether every near probe has a setpoint with a strictly smaller value ``eps*V + T``.

    ``delta=None`` searches the ladder and reports the largest passing value;
    an explicit ``delta`` is checked alone.
    """
    if delta is not None:
        return _check_fixed(model, costs, r1, region, epsilon, N, delta, False)
    return _check(model, costs, r1, region, epsilon, N, False)


def is_transitory_def2(model: SystemModel, costs, r1: Setpoint, region: FinitePointSet, epsilon, N: int,
                       delta=None) -> TransitoryReport:
    """Like :func:`is_transitory_def1`, but the alternative plan is forced to
    start with the probe input and the alternative setpoint must have a
    strictly smaller offset cost."""
    if delta is not None:
        return _check_fixed(model, costs, r1, region, epsilon, N, delta, True)
    return _check(model, costs, r1, region, epsilon, N, True)


def _check_fixed(model, costs, r1, region, epsilon, N, delta, def2):
    rep = _check(model, costs, r1, region, epsilon, N, def2)
    if rep.is_transitory and delta <= rep.delta_used:
        kept = [w for w in rep.witnesses]
        return TransitoryReport(r1, True, rep.witness, delta, rep.probe_points, kept)
    if not rep.is_transitory:
        return rep
    # delta beyond the largest passing ladder value: some probe below delta fails
    return TransitoryReport(r1, False, None, delta, rep.probe_points, [], rep.failing_probe)
