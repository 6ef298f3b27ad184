"""Sparse multiple-shooting transcription solved by IPOPT through CasADi.

The condensed problem in :mod:`.continuous` has dense Jacobians, which makes
dense SQP iterations expensive at long horizons.  Here states are decision
variables again, so every constraint touches a handful of variables and
IPOPT works with the exact sparse Hessian.  The transcription mirrors the
condensed one row for row (same margins, same disk assignment), and its
result is mapped back to the condensed layout so the caller can polish and
audit it exactly like any other candidate.

One solver object is built per problem structure and reused; everything
that changes between steps (current state, sensed disks, known obstacles,
storage bound, goal) enters as a parameter or as a bound.
"""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from ..solver import SolveReport
from .continuous import ContinuousProblem, rollout_with_sens

__all__ = ["available", "solve_sparse"]

_CACHE: "OrderedDict[tuple, _Transcription]" = OrderedDict()
_CACHE_SIZE = 8


def available(model) -> bool:
    if model.symbolic_step is None or model.steady_coords is None:
        return False
    try:
        import casadi  # noqa: F401
    except ImportError:
        return False
    return True


class _Transcription:
    def __init__(self, prob: ContinuousProblem, n_obs: int, ipopt_options: dict):
        import casadi as ca

        self.ca = ca
        n, m, N, p = prob.n, prob.m, prob.N, prob.p
        self.n, self.m, self.N, self.p = n, m, N, p
        self.baseline = prob.baseline
        self.n_obs = n_obs
        cfg, costs = prob.cfg, prob.costs
        eps, lam, mg = cfg.epsilon, cfg.lam, cfg.margin
        a0, a1 = prob.axes
        R = prob.R
        E = ca.DM(prob.E)
        Q, Rw, P = ca.DM(costs.Q), ca.DM(costs.R), ca.DM(costs.P)
        f = prob.model.symbolic_step
        ntraj = 1 if self.baseline else 2

        # parameters: x_t | y_desired | obstacles (cx, cy, r, on) | knot disks | setpoint disk
        x_t = ca.SX.sym("x_t", n)
        yd = ca.SX.sym("yd", 2)
        obs = ca.SX.sym("obs", 4, max(n_obs, 1))
        disks = ca.SX.sym("disks", 2, N - 1)
        sdisk = ca.SX.sym("sdisk", 2)
        params = [x_t, yd, ca.vec(obs), ca.vec(disks), sdisk]

        u0 = ca.SX.sym("u0", m)
        Us, Xs, Th = [], [], []
        for j in range(ntraj):
            Us.append(ca.SX.sym(f"U{j}", m, N - 1))
            Th.append(ca.SX.sym(f"th{j}", p))
            Xs.append(ca.SX.sym(f"X{j}", n, N))
        w = [u0] + [ca.vec(U) for U in Us] + Th + [ca.vec(X) for X in Xs]
        self.w = ca.vertcat(*w)

        g, lbg, ubg = [], [], []
        J = 0
        for j in range(ntraj):
            safe = j == ntraj - 1
            U = ca.horzcat(u0, Us[j])
            X = ca.horzcat(x_t, Xs[j])
            zs = ca.mtimes(E, Th[j])
            xs, us = zs[:n], zs[n:]
            V = 0
            for k in range(N):
                dx, du = X[:, k] - xs, U[:, k] - us
                V += ca.bilin(Q, dx, dx) + ca.bilin(Rw, du, du)
                g.append(X[:, k + 1] - f(X[:, k], U[:, k]))
                lbg += [0.0] * n
                ubg += [0.0] * n
            g.append(X[:, N] - xs)
            lbg += [0.0] * n
            ubg += [0.0] * n
            ys = ca.vertcat(xs[a0], xs[a1])
            dy = ys - yd
            T = ca.bilin(P, dy, dy)
            for k in range(1, N):
                y = ca.vertcat(X[a0, k], X[a1, k])
                for i in range(n_obs):
                    d = y - obs[:2, i]
                    g.append(obs[3, i] * ((obs[2, i] + mg) ** 2 - ca.dot(d, d)))
                    lbg.append(-ca.inf)
                    ubg.append(0.0)
                if safe:
                    d = y - disks[:, k - 1]
                    g.append(ca.dot(d, d) - (R - mg) ** 2)
                    lbg.append(-ca.inf)
                    ubg.append(0.0)
            for i in range(n_obs):
                d = ys - obs[:2, i]
                g.append(obs[3, i] * ((obs[2, i] + lam + mg) ** 2 - ca.dot(d, d)))
                lbg.append(-ca.inf)
                ubg.append(0.0)
            if safe:
                d = ys - sdisk
                g.append(ca.dot(d, d) - (R - lam - mg) ** 2)
                lbg.append(-ca.inf)
                ubg.append(0.0)
            if self.baseline:
                J = eps * V + T
            elif safe:
                J += eps * T
                FB = eps * V + T
            else:
                J += V + T
        if self.baseline:
            FB = J
        # storage row, bounded above only when the convergence constraint is active
        g.append(FB)
        lbg.append(-ca.inf)
        ubg.append(ca.inf)
        self.lbg, self.ubg = np.array(lbg, dtype=float), np.array(ubg, dtype=float)
        self.g = ca.vertcat(*g)
        self.p_sym = ca.vertcat(*params)
        nlp = {"x": self.w, "p": self.p_sym, "f": J, "g": self.g}
        opts = {"print_time": False, "ipopt": dict(ipopt_options)}
        self.solver = ca.nlpsol("mpc_step", "ipopt", nlp, opts)
        self.nw = int(self.w.numel())
        # index bookkeeping for packing and unpacking w
        off = m
        self.u_idx = []
        for j in range(ntraj):
            self.u_idx.append(np.arange(off, off + (N - 1) * m))
            off += (N - 1) * m
        self.th_idx = []
        for j in range(ntraj):
            self.th_idx.append(np.arange(off, off + p))
            off += p
        self.x_idx = []
        for j in range(ntraj):
            self.x_idx.append(np.arange(off, off + N * n))
            off += N * n

    def bounds(self, prob: ContinuousProblem):
        n, m, N = self.n, self.m, self.N
        lo, hi = np.full(self.nw, -np.inf), np.full(self.nw, np.inf)
        ulo, uhi = prob.box_lo[n:], prob.box_hi[n:]
        lo[:m], hi[:m] = ulo, uhi
        trajs = prob.trajs
        mg = prob.cfg.margin
        xlo = np.where(np.isfinite(prob.box_lo[:n]), prob.box_lo[:n] + mg, -np.inf)
        xhi = np.where(np.isfinite(prob.box_hi[:n]), prob.box_hi[:n] - mg, np.inf)
        for j, tr in enumerate(trajs):
            lo[self.u_idx[j]] = np.tile(ulo, N - 1)
            hi[self.u_idx[j]] = np.tile(uhi, N - 1)
            lo[self.th_idx[j]] = prob.lower[tr.sp]
            hi[self.th_idx[j]] = prob.upper[tr.sp]
            # knots 1..N-1 carry the state box; the terminal state is pinned by equality
            xl = np.tile(xlo, N)
            xh = np.tile(xhi, N)
            xl[-n:], xh[-n:] = -np.inf, np.inf
            lo[self.x_idx[j]], hi[self.x_idx[j]] = xl, xh
        return lo, hi

    def params(self, prob: ContinuousProblem, obstacle_table):
        obs = np.zeros((4, max(self.n_obs, 1)))
        known = {(float(c[0]), float(c[1]), float(r)) for c, r in prob.obstacles}
        for i, (c, r) in enumerate(obstacle_table):
            obs[:, i] = (c[0], c[1], r, 1.0 if (float(c[0]), float(c[1]), float(r)) in known else 0.0)
        disks = np.asarray(prob.backup.disk_of_knot, dtype=float).T
        return np.concatenate([prob.x_t, np.asarray(prob.costs.y_desired, dtype=float), obs.T.ravel(),
                               disks.T.ravel(), np.asarray(prob.backup.disk_of_setpoint, dtype=float)])

    def pack(self, prob: ContinuousProblem, z):
        n, m, N = self.n, self.m, self.N
        w = np.zeros(self.nw)
        w[:m] = z[:m]
        for j, tr in enumerate(prob.trajs):
            U = z[tr.cols].reshape(N, m)
            w[self.u_idx[j]] = U[1:].ravel()
            w[self.th_idx[j]] = z[tr.sp]
            X, _ = rollout_with_sens(prob.model, prob.x_t, U)
            w[self.x_idx[j]] = X[1:].ravel()
        return w

    def unpack(self, prob: ContinuousProblem, w):
        m, N = self.m, self.N
        z = np.zeros(prob.nz)
        for j, tr in enumerate(prob.trajs):
            U = np.concatenate([w[:m], w[self.u_idx[j]]])
            z[tr.cols] = U
            z[tr.sp] = w[self.th_idx[j]]
        return z


def _key(prob: ContinuousProblem, n_obs: int, opts: tuple):
    c = prob.costs
    cfg = prob.cfg
    return (id(prob.model.symbolic_step), prob.n, prob.m, prob.N, prob.coords, prob.baseline, n_obs,
            c.Q.tobytes(), c.R.tobytes(), c.P.tobytes(), cfg.epsilon, cfg.lam, cfg.margin, prob.R,
            tuple(prob.axes), opts)


def solve_sparse(prob: ContinuousProblem, z0, max_iter: int = 300, tol: float = 1e-8) -> SolveReport:
    """Solve the problem described by ``prob`` from the condensed point ``z0``.

    The returned point is in the condensed layout; feasibility is left to
    the caller's exact audit.
    """
    table = [(np.asarray(o.center, dtype=float), o.radius) for o in prob.k.obstacles]
    options = (("print_level", 0), ("sb", "yes"), ("max_iter", int(max_iter)), ("tol", float(tol)),
               ("constr_viol_tol", 1e-9), ("acceptable_iter", 0), ("mu_strategy", "adaptive"),
               ("bound_relax_factor", 0.0), ("hessian_approximation", "exact"))
    key = _key(prob, len(table), options)
    tx = _CACHE.get(key)
    if tx is None:
        tx = _Transcription(prob, len(table), dict(options))
        _CACHE[key] = tx
        while len(_CACHE) > _CACHE_SIZE:
            _CACHE.popitem(last=False)
    else:
        _CACHE.move_to_end(key)
    lo, hi = tx.bounds(prob)
    w0 = np.clip(tx.pack(prob, z0), lo, hi)
    ubg = tx.ubg.copy()
    if prob.active_9j:
        ubg[-1] = prob.storage.bound - prob.cfg.storage_margin
    sol = tx.solver(x0=w0, p=tx.params(prob, table), lbx=lo, ubx=hi, lbg=tx.lbg, ubg=ubg)
    stats = tx.solver.stats()
    w = np.asarray(sol["x"], dtype=float).ravel()
    z = np.clip(tx.unpack(prob, w), prob.lower, prob.upper)
    g = np.asarray(sol["g"], dtype=float).ravel()
    viol = float(max(0.0, np.max(np.concatenate([tx.lbg - g, g - ubg]))))
    ok = bool(stats.get("success", False))
    status = "optimal" if ok else ("feasible" if viol <= prob.cfg.feas_tol else "failed")
    return SolveReport(point=z, objective=float(sol["f"]), max_eq_residual=viol, max_ineq_violation=viol,
                       stationarity=float("nan"), iterations=int(stats.get("iter_count", 0)), status=status,
                       message=str(stats.get("return_status", "")))
