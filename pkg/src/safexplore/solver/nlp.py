"""Smooth constrained NLP solver.

Augmented Lagrangian outer loop (Powell-Hestenes-Rockafellar form) around
bound-constrained L-BFGS-B inner solves.  Problems are described by an
:class:`NlpSpec` whose callbacks return values together with derivatives.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize

__all__ = ["NlpSpec", "SolveReport", "SolverOptions", "NumericalDomainError", "solve_nlp",
           "check_gradients", "GradientReport", "evaluate_residuals"]


class NumericalDomainError(FloatingPointError):
    """A problem callback returned a non-finite value."""

    def __init__(self, where: str, index: Optional[int] = None):
        self.where = where
        self.index = index
        msg = f"non-finite value in {where}" + (f" (row {index})" if index is not None else "")
        super().__init__(msg)


@dataclass
class NlpSpec:
    """Continuous problem ``min f(z)`` s.t. ``c(z) = 0``, ``g(z) <= 0``, ``lower <= z <= upper``.

    ``objective`` returns ``(f, grad)``; ``eq`` and ``ineq`` return
    ``(values, jacobian)``.  For finite problems set ``discrete=True`` and
    fill ``blocks``/``evaluate`` instead (see :mod:`.discrete`).
    """

    n: int = 0
    objective: Optional[Callable] = None
    eq: Optional[Callable] = None
    ineq: Optional[Callable] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    layout: dict = field(default_factory=dict)
    eq_groups: list = field(default_factory=list)
    ineq_groups: list = field(default_factory=list)
    discrete: bool = False
    blocks: list = field(default_factory=list)
    evaluate: Optional[Callable] = None
    prefix_ok: Optional[Callable] = None
    tiebreak: Optional[Callable] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.discrete:
            if self.lower is None:
                self.lower = np.full(self.n, -np.inf)
            if self.upper is None:
                self.upper = np.full(self.n, np.inf)
            self.lower = np.asarray(self.lower, dtype=float)
            self.upper = np.asarray(self.upper, dtype=float)


@dataclass
class SolveReport:
    point: object
    objective: float
    max_eq_residual: float
    max_ineq_violation: float
    stationarity: float
    iterations: int
    status: str
    message: str = ""

    @property
    def feasible_within(self):
        return max(self.max_eq_residual, self.max_ineq_violation)


@dataclass
class SolverOptions:
    feas: float = 1e-6
    stat: float = 1e-4
    max_iter: int = 30
    inner_max_iter: int = 400
    rho0: float = 10.0
    rho_growth: float = 10.0
    rho_max: float = 1e10
    # "auglag" (default), "slsqp" (scipy's dense SQP) or "auto" (SQP, then
    # the augmented Lagrangian if SQP fails)
    method: str = "auglag"
    # SQP working set: rows with g < -gap at the start are left out until
    # violated; None keeps every row
    working_set_gap: Optional[float] = 0.5
    working_set_rounds: int = 6


def _eval_constraints(spec: NlpSpec, z):
    if spec.eq is not None:
        c, Jc = spec.eq(z)
        c, Jc = np.asarray(c, dtype=float), np.asarray(Jc, dtype=float).reshape(len(c), spec.n)
    else:
        c, Jc = np.zeros(0), np.zeros((0, spec.n))
    if spec.ineq is not None:
        g, Jg = spec.ineq(z)
        g, Jg = np.asarray(g, dtype=float), np.asarray(Jg, dtype=float).reshape(len(g), spec.n)
    else:
        g, Jg = np.zeros(0), np.zeros((0, spec.n))
    for name, arr in (("equality constraints", c), ("inequality constraints", g)):
        bad = np.flatnonzero(~np.isfinite(arr))
        if bad.size:
            raise NumericalDomainError(name, int(bad[0]))
    return c, Jc, g, Jg


def _eval_objective(spec: NlpSpec, z):
    f, grad = spec.objective(z)
    if not math.isfinite(f):
        raise NumericalDomainError("objective")
    return float(f), np.asarray(grad, dtype=float)


def evaluate_residuals(spec: NlpSpec, z):
    """``(objective, max |c|, max g+, bound violation)`` recomputed at ``z``."""
    f, _ = _eval_objective(spec, z)
    c, _, g, _ = _eval_constraints(spec, z)
    eq_res = float(np.max(np.abs(c))) if c.size else 0.0
    ineq_res = float(max(0.0, np.max(g))) if g.size else 0.0
    bnd = float(max(0.0, np.max(spec.lower - z), np.max(z - spec.upper))) if spec.n else 0.0
    return f, eq_res, max(ineq_res, bnd)


def _stationarity(grad, Jc, Jg, g, mu, nu, z, lo, hi):
    r = grad + Jc.T @ mu + Jg.T @ nu
    # projected onto the bound-feasible directions
    r = np.where((z <= lo + 1e-12) & (r > 0), 0.0, r)
    r = np.where((z >= hi - 1e-12) & (r < 0), 0.0, r)
    return float(np.max(np.abs(r))) if r.size else 0.0


def solve_nlp(spec: NlpSpec, start, options: Optional[SolverOptions] = None, **overrides) -> SolveReport:
    """Solve ``spec`` from ``start``.

    The returned point is either feasible to ``feas`` or flagged
    ``status="failed"``.  A feasible start is never returned worse: the best
    feasible iterate (the start included) wins.
    """
    opts = replace(options or SolverOptions(), **overrides)
    lo, hi = spec.lower, spec.upper
    z0 = np.asarray(start, dtype=float).copy()
    if np.any(z0 < lo - 1e-12) or np.any(z0 > hi + 1e-12):
        raise ValueError("start violates the variable bounds")
    z0 = np.clip(z0, lo, hi)

    f0, eq0, in0 = evaluate_residuals(spec, z0)
    best = (f0, z0.copy()) if max(eq0, in0) <= opts.feas else None
    if opts.method in ("slsqp", "auto"):
        rep = _solve_slsqp(spec, z0, opts, best)
        if opts.method == "slsqp" or rep.status != "failed":
            return rep
    elif opts.method != "auglag":
        raise ValueError(f"unknown method {opts.method!r}")

    c, Jc, g, Jg = _eval_constraints(spec, z0)
    mu = np.zeros(c.size)
    nu = np.zeros(g.size)
    rho = opts.rho0
    z = z0
    prev_viol = math.inf
    status, message = "failed", "iteration limit"
    iters = 0
    stat = math.inf
    bounds = list(zip(np.where(np.isfinite(lo), lo, None), np.where(np.isfinite(hi), hi, None)))

    for outer in range(opts.max_iter):
        iters = outer + 1

        def lag(zz, mu=mu, nu=nu, rho=rho):
            f, gf = _eval_objective(spec, zz)
            cc, JJc, gg, JJg = _eval_constraints(spec, zz)
            val = f + mu @ cc + 0.5 * rho * cc @ cc
            grad = gf + JJc.T @ (mu + rho * cc)
            shifted = np.maximum(0.0, nu + rho * gg)
            val += (shifted @ shifted - nu @ nu) / (2 * rho)
            grad = grad + JJg.T @ shifted
            return val, grad

        res = minimize(lag, z, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": opts.inner_max_iter, "gtol": opts.stat * 0.1, "ftol": 1e-15,
                                "maxcor": 20})
        z = np.clip(res.x, lo, hi)
        f, gf = _eval_objective(spec, z)
        c, Jc, g, Jg = _eval_constraints(spec, z)
        eq_res = float(np.max(np.abs(c))) if c.size else 0.0
        in_res = float(max(0.0, np.max(g))) if g.size else 0.0
        comp = float(np.max(np.abs(np.minimum(-g, nu / rho)))) if g.size else 0.0
        viol = max(eq_res, in_res, comp)

        mu = mu + rho * c
        nu = np.maximum(0.0, nu + rho * g)
        stat = _stationarity(gf, Jc, Jg, g, mu, nu, z, lo, hi)

        if max(eq_res, in_res) <= opts.feas and (best is None or f < best[0]):
            best = (f, z.copy())
        if max(eq_res, in_res) <= opts.feas and stat <= opts.stat:
            status, message = "optimal", "converged"
            break
        if viol > 0.25 * prev_viol:
            rho = min(rho * opts.rho_growth, opts.rho_max)
        prev_viol = viol

    if best is not None:
        zb = best[1]
        if status != "optimal":
            status, message = "feasible", message + "; returning best feasible iterate"
    else:
        zb = z
    fb, eqb, inb = evaluate_residuals(spec, zb)
    cb, Jcb, gb, Jgb = _eval_constraints(spec, zb)
    _, gfb = _eval_objective(spec, zb)
    stat_b = _stationarity(gfb, Jcb, Jgb, gb, mu, np.where(gb > -1e-6, nu, 0.0), zb, lo, hi)
    if max(eqb, inb) > opts.feas:
        status = "failed"
    return SolveReport(point=zb, objective=fb, max_eq_residual=eqb, max_ineq_violation=inb,
                       stationarity=stat_b, iterations=iters, status=status, message=message)


def _finish(spec, zb, status, message, iters, mult_eq=None, mult_in=None):
    fb, eqb, inb = evaluate_residuals(spec, zb)
    cb, Jcb, gb, Jgb = _eval_constraints(spec, zb)
    _, gfb = _eval_objective(spec, zb)
    mu = np.zeros(cb.size) if mult_eq is None else mult_eq
    nu = np.zeros(gb.size) if mult_in is None else mult_in
    stat_b = _stationarity(gfb, Jcb, Jgb, gb, mu, np.where(gb > -1e-6, nu, 0.0), zb, spec.lower, spec.upper)
    return SolveReport(point=zb, objective=fb, max_eq_residual=eqb, max_ineq_violation=inb,
                       stationarity=stat_b, iterations=iters, status=status, message=message)


def _solve_slsqp(spec: NlpSpec, z0, opts: SolverOptions, best):
    """Dense SQP on a working set of inequality rows.

    Rows far from active at the current point are left out of the QP; any
    row violated at the returned point joins the set and the solve resumes
    from there.  The dense QP cost grows with the row count, so this keeps
    long horizons affordable.
    """
    lo, hi = spec.lower, spec.upper
    bounds = list(zip(np.where(np.isfinite(lo), lo, None), np.where(np.isfinite(hi), hi, None)))
    iters = 0
    track = [best]
    _, _, g0, _ = _eval_constraints(spec, z0)
    work = g0 > -opts.working_set_gap if opts.working_set_gap is not None else np.ones(g0.size, bool)

    def callback(zk):
        nonlocal iters
        iters += 1
        zk = np.clip(zk, lo, hi)
        f, e, i = evaluate_residuals(spec, zk)
        if max(e, i) <= opts.feas and (track[0] is None or f < track[0][0]):
            track[0] = (f, zk.copy())

    z = z0
    message, converged = "", False
    for _round in range(opts.working_set_rounds):
        rows = np.flatnonzero(work)
        cons = []
        if spec.eq is not None:
            cons.append({"type": "eq", "fun": lambda zz: _eval_constraints(spec, zz)[0],
                         "jac": lambda zz: _eval_constraints(spec, zz)[1]})
        if rows.size:
            cons.append({"type": "ineq", "fun": lambda zz, r=rows: -_eval_constraints(spec, zz)[2][r],
                         "jac": lambda zz, r=rows: -_eval_constraints(spec, zz)[3][r]})
        with warnings.catch_warnings():
            # SLSQP probes slightly outside the bounds and clips; the callbacks clip too
            warnings.filterwarnings("ignore", "Values in x were outside bounds", RuntimeWarning)
            res = minimize(lambda zz: _eval_objective(spec, zz), z, jac=True, method="SLSQP", bounds=bounds,
                           constraints=cons, callback=callback,
                           options={"maxiter": opts.max_iter * 10, "ftol": opts.stat * 1e-4})
        z = np.clip(res.x, lo, hi)
        message = str(res.message)
        _, _, g, _ = _eval_constraints(spec, z)
        missing = (g > -opts.working_set_gap if opts.working_set_gap is not None else g > 0) & ~work
        if not np.any(missing & (g > opts.feas)):
            converged = res.status == 0
            break
        work |= missing
    f, e, i = evaluate_residuals(spec, z)
    converged = converged and max(e, i) <= opts.feas
    if max(e, i) <= opts.feas and (track[0] is None or f <= track[0][0]):
        track[0] = (f, z)
    if track[0] is None:
        return _finish(spec, z, "failed", message, iters)
    zb = track[0][1]
    status = "optimal" if converged and zb is z else "feasible"
    return _finish(spec, zb, status, message, iters)


# -- derivative self-test ----------------------------------------------------


@dataclass
class GradientReport:
    objective: float
    equality: float
    inequality: float

    @property
    def worst(self) -> float:
        return max(self.objective, self.equality, self.inequality)


def _rel_dev(analytic, numeric):
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / scale))


def check_gradients(spec: NlpSpec, point, step: float = 1e-6) -> GradientReport:
    """Compare provided derivatives with central differences at ``point``."""
    z = np.asarray(point, dtype=float)
    h = step * np.maximum(1.0, np.abs(z))
    _, gf = _eval_objective(spec, z)
    c, Jc, g, Jg = _eval_constraints(spec, z)
    num_g = np.zeros(spec.n)
    num_Jc = np.zeros_like(Jc)
    num_Jg = np.zeros_like(Jg)
    for i in range(spec.n):
        zp, zm = z.copy(), z.copy()
        zp[i] += h[i]
        zm[i] -= h[i]
        fp, _ = _eval_objective(spec, zp)
        fm, _ = _eval_objective(spec, zm)
        num_g[i] = (fp - fm) / (2 * h[i])
        cp, _, gp, _ = _eval_constraints(spec, zp)
        cm, _, gm, _ = _eval_constraints(spec, zm)
        if c.size:
            num_Jc[:, i] = (cp - cm) / (2 * h[i])
        if g.size:
            num_Jg[:, i] = (gp - gm) / (2 * h[i])
    return GradientReport(objective=_rel_dev(gf, num_g), equality=_rel_dev(Jc, num_Jc),
                          inequality=_rel_dev(Jg, num_Jg))
