"""Exact global solver for finite scenarios.

Exhaustive depth-first enumeration over the finite candidate sets of an
:class:`NlpSpec` with ``discrete=True``, plus a memoized dynamic program for
single-trajectory optimal costs on finite point sets.
"""
from __future__ import annotations

import math
from functools import lru_cache
from typing import Callable, Optional

from .nlp import NlpSpec, SolveReport

__all__ = ["ScenarioTooLarge", "solve_exact_discrete", "value_function", "admissible_inputs"]

DEFAULT_GUARD = 10**7


class ScenarioTooLarge(RuntimeError):
    """Enumeration would exceed the configured leaf budget."""


def solve_exact_discrete(spec: NlpSpec, guard: int = DEFAULT_GUARD) -> SolveReport:
    """Globally optimal assignment of ``spec.blocks`` by enumeration.

    ``blocks`` is a list of ``(name, candidates)`` where ``candidates`` is a
    sequence or a callable of the partial assignment.  ``prefix_ok`` prunes
    partial assignments, ``evaluate`` maps a full assignment to
    ``(objective, feasible)``.  Ties are broken by ``tiebreak`` (default:
    the assignment values in block order).
    """
    if not spec.discrete:
        raise ValueError("solve_exact_discrete needs a discrete spec")
    names = [b[0] for b in spec.blocks]
    tiebreak = spec.tiebreak or (lambda a: tuple(a[n] for n in names))
    best = None
    leaves = 0
    assign: dict = {}

    def rec(i):
        nonlocal best, leaves
        if i == len(spec.blocks):
            leaves += 1
            if leaves > guard:
                raise ScenarioTooLarge(f"more than {guard} assignments")
            obj, ok = spec.evaluate(assign)
            if not ok:
                return
            key = (obj, tiebreak(assign))
            if best is None or key < best[0]:
                best = (key, dict(assign))
            return
        name, cands = spec.blocks[i]
        if callable(cands):
            cands = cands(assign)
        for c in cands:
            assign[name] = c
            if spec.prefix_ok is None or spec.prefix_ok(assign, i):
                rec(i + 1)
            del assign[name]

    rec(0)
    if best is None:
        return SolveReport(point=None, objective=math.inf, max_eq_residual=0.0, max_ineq_violation=0.0,
                           stationarity=0.0, iterations=leaves, status="infeasible",
                           message="empty feasible set")
    return SolveReport(point=best[1], objective=best[0][0], max_eq_residual=0.0, max_ineq_violation=0.0,
                       stationarity=0.0, iterations=leaves, status="optimal")


def admissible_inputs(region, x) -> list:
    """Inputs ``u`` with ``(x, u)`` in a finite point set, sorted."""
    return sorted(u for (xx, u) in region.points if xx == x)


def value_function(model, region, cost, r, N: int, allowed_inputs: Optional[Callable] = None):
    """Memoized optimal tracking cost with terminal equality ``x_N = r.x``.

    Returns ``V(x)`` as a callable giving ``(value, inputs)``; infeasible
    states map to ``(inf, None)``.  Ties go to the lexicographically smallest
    input sequence.
    """
    states = {x for (x, _) in region.points}
    inputs_at = allowed_inputs or (lambda x: admissible_inputs(region, x))

    @lru_cache(maxsize=None)
    def V(x, steps):
        if steps == 0:
            if x == r.x:
                return (cost.terminal(x, r), ())
            return (math.inf, None)
        best = (math.inf, None)
        for u in inputs_at(x):
            nxt = model.step(x, u)
            if nxt not in states:
                continue
            tail, seq = V(nxt, steps - 1)
            if seq is None:
                continue
            val = cost.stage(x, u, r) + tail
            cand = (val, (u,) + seq)
            if cand[0] < best[0] or (cand[0] == best[0] and best[1] is not None and cand[1] < best[1]):
                best = cand
        return best

    def value(x, steps: int = N):
        if x not in states:
            return (math.inf, None)
        return V(x, steps)

    return value
