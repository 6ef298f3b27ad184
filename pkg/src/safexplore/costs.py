"""Stage, tracking and offset costs, plus the best reachable setpoint."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .dynamics import SystemModel, Trajectory
from .environment import (
    FinitePointSet,
    HyperBox,
    Intersection,
    OutputDisk,
    RegionExpr,
    Setpoint,
    Union,
    contains_with_margin,
    is_steady_admissible,
)

__all__ = [
    "CostConfig",
    "TabularCost",
    "GridCost",
    "AssumptionConstants",
    "NoSteadySetpoint",
    "stage_cost",
    "tracking_cost",
    "offset_cost",
    "best_reachable_setpoint",
    "estimate_assumption_constants",
    "min_stage_cost",
]


class NoSteadySetpoint(ValueError):
    """The admissible steady-state manifold is empty."""


def _spd(M: np.ndarray, name: str) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square")
    if not np.allclose(M, M.T):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(M).min() <= 0:
        raise ValueError(f"{name} must be positive definite")
    return M


@dataclass(frozen=True)
class CostConfig:
    """Quadratic stage cost and output offset cost for continuous models."""

    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    y_desired: np.ndarray
    N: int

    def __post_init__(self):
        object.__setattr__(self, "Q", _spd(self.Q, "Q"))
        object.__setattr__(self, "R", _spd(self.R, "R"))
        object.__setattr__(self, "P", _spd(self.P, "P"))
        object.__setattr__(self, "y_desired", np.asarray(self.y_desired, dtype=float))
        if self.N < 1:
            raise ValueError("horizon must be positive")

    def stage(self, x, u, r: Setpoint) -> float:
        dx = np.asarray(x, dtype=float) - r.x
        du = np.asarray(u, dtype=float) - r.u
        return float(dx @ self.Q @ dx + du @ self.R @ du)

    def terminal(self, x, r: Setpoint) -> float:
        # terminal equality: the terminal state is pinned, no terminal cost
        return 0.0

    def offset(self, r: Setpoint, output_fn: Callable) -> float:
        dy = np.asarray(output_fn(r.x, r.u), dtype=float) - self.y_desired
        return float(dy @ self.P @ dy)


@dataclass(frozen=True)
class TabularCost:
    """Exact lookup costs for finite scenarios."""

    table: dict
    terminal_table: dict = field(default_factory=dict)
    offset_table: Optional[dict] = None
    N: int = 3

    def stage(self, x, u, r: Setpoint):
        return self.table[(x, u)]

    def terminal(self, x, r: Setpoint):
        return self.terminal_table.get((x, (r.x, r.u)), 0)

    def offset(self, r: Setpoint, output_fn=None):
        if self.offset_table is None:
            return 0
        return self.offset_table[(r.x, r.u)]


@dataclass(frozen=True)
class GridCost:
    """Integer quadratic costs for 1-D grid scenarios.

    Arithmetic stays in Python numbers so that integer or ``Fraction``
    weights give exact comparisons.
    """

    q: object = 1
    r: object = 1
    p: object = 1
    y_desired: object = 0
    N: int = 3

    def stage(self, x, u, sp: Setpoint):
        return self.q * (x - sp.x) ** 2 + self.r * (u - sp.u) ** 2

    def terminal(self, x, sp: Setpoint):
        return 0

    def offset(self, sp: Setpoint, output_fn=None):
        return self.p * (sp.x - self.y_desired) ** 2


@dataclass(frozen=True)
class AssumptionConstants:
    a1: float
    a2: float
    gamma: float
    chi: float
    samples: int = 0


def stage_cost(cfg, x, u, r: Setpoint):
    return cfg.stage(x, u, r)


def tracking_cost(cfg, traj: Trajectory, r: Setpoint, N: Optional[int] = None):
    """Sum of stage costs along ``traj`` plus the terminal cost."""
    horizon = cfg.N if N is None else N
    if traj.horizon != horizon:
        raise ValueError(f"trajectory horizon {traj.horizon} does not match N={horizon}")
    total = 0
    for x, u in zip(traj.states[:-1], traj.inputs):
        total = total + cfg.stage(x, u, r)
    return total + cfg.terminal(traj.states[-1], r)


def offset_cost(cfg, r: Setpoint, output_fn: Optional[Callable] = None):
    return cfg.offset(r, output_fn)


# -- best reachable setpoint -------------------------------------------------


@dataclass
class BestSetpoint:
    setpoint: Setpoint
    objective: float
    starts: int = 1
    converged: int = 1
    spread: float = 0.0


def _finite_steady_points(model: SystemModel, region: FinitePointSet, allowed=None):
    pts = []
    for (x, u) in sorted(region.points):
        r = Setpoint(x, u)
        if allowed is not None and (x, u) not in allowed:
            continue
        if is_steady_admissible(model, r, region, 0):
            pts.append(r)
    return pts


def _branches(region: RegionExpr):
    """Expand unions so that every branch is a flat list of box/disk atoms."""
    if isinstance(region, (HyperBox, OutputDisk)):
        return [[region]]
    if isinstance(region, Union):
        out = []
        for p in region.parts:
            out.extend(_branches(p))
        return out
    if isinstance(region, Intersection):
        out = [[]]
        for p in region.parts:
            out = [a + b for a in out for b in _branches(p)]
        return out
    raise TypeError(f"unsupported region for continuous setpoint search: {region!r}")


def best_reachable_setpoint(model: SystemModel, region: RegionExpr, cfg, lam: float,
                            allowed=None, starts: int = 8, seed: int = 0) -> BestSetpoint:
    """Minimize the offset cost over the steady admissible pairs of ``region``.

    Finite regions are enumerated.  Continuous regions are split into
    union-free branches and each branch is solved from several starts.
    """
    if isinstance(region, FinitePointSet):
        pts = _finite_steady_points(model, region, allowed)
        if not pts:
            raise NoSteadySetpoint("region has no steady admissible pair")
        best = min(pts, key=lambda r: (cfg.offset(r, model.output_fn), r.x, r.u))
        return BestSetpoint(best, cfg.offset(best, model.output_fn), starts=len(pts), converged=len(pts))

    from .solver import NlpSpec, solve_nlp

    n, m = model.state_dim, model.input_dim
    rng = np.random.default_rng(seed)
    found = []
    for atoms in _branches(region):
        spec, x0s = _setpoint_nlp(model, atoms, cfg, lam, rng, starts)
        if spec is None:
            continue
        for z0 in x0s:
            rep = solve_nlp(spec, z0)
            if rep.status != "failed":
                r = Setpoint(rep.point[:n].copy(), rep.point[n:].copy())
                if is_steady_admissible(model, r, region, lam * (1 - 1e-6)):
                    found.append((rep.objective, r))
    if not found:
        raise NoSteadySetpoint("no steady admissible pair found")
    found.sort(key=lambda t: t[0])
    objs = [f for f, _ in found]
    return BestSetpoint(found[0][1], objs[0], starts=starts, converged=len(found), spread=objs[-1] - objs[0])


def _setpoint_nlp(model, atoms, cfg, lam, rng, starts):
    from .solver import NlpSpec

    n, m = model.state_dim, model.input_dim
    dim = n + m
    lo = np.full(dim, -np.inf)
    hi = np.full(dim, np.inf)
    disks = []
    for a in atoms:
        if isinstance(a, HyperBox):
            lo = np.maximum(lo, np.asarray(a.lower, dtype=float) + lam)
            hi = np.minimum(hi, np.asarray(a.upper, dtype=float) - lam)
        else:
            disks.append(a)
    if np.any(lo > hi):
        return None, []

    def obj(z):
        x, u = z[:n], z[n:]
        y = model.output_fn(x, u)
        C, D = model.output_jac(x, u)
        dy = y - cfg.y_desired
        g = 2 * np.concatenate([C.T @ cfg.P @ dy, D.T @ cfg.P @ dy])
        return float(dy @ cfg.P @ dy), g

    def eq(z):
        x, u = z[:n], z[n:]
        A, B = model.step_jac(x, u)
        c = model.step_fn(x, u) - x
        J = np.hstack([A - np.eye(n), B])
        return c, J

    def ineq(z):
        rows, jac = [], []
        for d in disks:
            i, j = d.axes
            dz = np.array([z[i] - d.center[0], z[j] - d.center[1]])
            g = np.zeros(dim)
            if d.sense == "inside":
                rows.append(dz @ dz - (d.radius - lam) ** 2)
                g[i], g[j] = 2 * dz
            else:
                rows.append((d.radius + lam) ** 2 - dz @ dz)
                g[i], g[j] = -2 * dz
            jac.append(g)
        if not rows:
            return np.zeros(0), np.zeros((0, dim))
        return np.array(rows), np.array(jac)

    spec = NlpSpec(n=dim, objective=obj, eq=eq, ineq=ineq if disks else None, lower=lo, upper=hi)
    # starts: disk centers of inside-disks jittered, plus random points in the clipped box
    both = np.isfinite(lo) & np.isfinite(hi)
    mid = 0.5 * (np.where(both, lo, 0.0) + np.where(both, hi, 0.0))
    base = np.where(both, mid, np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0)))
    x0s = []
    inside = [d for d in disks if d.sense == "inside"]
    for s in range(starts):
        z = base.copy()
        if inside:
            d = inside[s % len(inside)]
            ang = rng.uniform(0, 2 * math.pi)
            rad = rng.uniform(0, d.radius - lam)
            z[d.axes[0]] = d.center[0] + rad * math.cos(ang)
            z[d.axes[1]] = d.center[1] + rad * math.sin(ang)
        else:
            z[:2] = z[:2] + rng.normal(scale=3.0, size=2)
        x0s.append(np.clip(z, lo, hi))
    return spec, x0s


# -- assumption constants ----------------------------------------------------


def min_stage_cost(cfg, model: SystemModel, x, r: Setpoint, region: RegionExpr):
    """Minimum stage cost over inputs with ``(x, u)`` in ``region``."""
    if isinstance(region, FinitePointSet):
        vals = [cfg.stage(x, u, r) for (xx, u) in region.points if xx == x]
        if not vals:
            return math.inf
        return min(vals)
    n = model.state_dim
    lo, hi = _input_box(region, n, model.input_dim)
    R = cfg.R
    dx = np.asarray(x, dtype=float) - r.x
    if np.allclose(R, np.diag(np.diag(R))):
        u = np.clip(r.u, lo, hi)
    else:
        from scipy.optimize import minimize

        res = minimize(lambda u: (u - r.u) @ R @ (u - r.u), np.clip(r.u, lo, hi),
                       jac=lambda u: 2 * R @ (u - r.u), bounds=list(zip(lo, hi)), method="L-BFGS-B")
        u = res.x
    du = u - r.u
    return float(dx @ cfg.Q @ dx + du @ R @ du)


def _input_box(region, n, m):
    lo, hi = np.full(m, -np.inf), np.full(m, np.inf)
    atoms = [region] if not isinstance(region, Intersection) else list(region.parts)
    for a in atoms:
        if isinstance(a, HyperBox):
            lo = np.maximum(lo, np.asarray(a.lower[n:], dtype=float))
            hi = np.minimum(hi, np.asarray(a.upper[n:], dtype=float))
    return lo, hi


def estimate_assumption_constants(model: SystemModel, cfg, region: RegionExpr, samples: Sequence,
                                  value_fn: Optional[Callable] = None, chi: float = 1.0) -> AssumptionConstants:
    """Empirical stage-cost sandwich constants over ``(x, setpoint)`` samples.

    ``value_fn(x, r)`` returns the optimal N-step tracking cost; without it
    ``gamma`` is reported as NaN.
    """
    if len(samples) < 100:
        raise ValueError("need at least 100 samples")
    ratios, gammas = [], []
    for x, r in samples:
        if model.discrete:
            d2 = float((x - r.x) ** 2)
        else:
            d2 = float(np.sum((np.asarray(x, dtype=float) - r.x) ** 2))
        if d2 == 0:
            continue
        lstar = min_stage_cost(cfg, model, x, r, region)
        if not math.isfinite(lstar):
            continue
        ratios.append(lstar / d2)
        if value_fn is not None and d2 <= chi and lstar > 0:
            v = value_fn(x, r)
            if math.isfinite(v):
                gammas.append(v / lstar)
    if not ratios:
        raise ValueError("all samples were degenerate")
    gamma = max(gammas) if gammas else math.nan
    return AssumptionConstants(a1=min(ratios), a2=max(ratios), gamma=gamma, chi=chi, samples=len(ratios))
