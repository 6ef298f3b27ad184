"""Condensed (single-shooting) NLP for the learning/backup problem.

Decision vector layout for the two-trajectory problem::

    [u0 | learning inputs 1..N-1 | backup inputs 1..N-1 | thetaL | thetaB]

The first input is one shared block, so the learning and backup plans agree
on it by construction.  States are eliminated through the model rollout and
its input sensitivities.  In baseline mode there is a single trajectory::

    [inputs 0..N-1 | theta]

A setpoint is ``(x, u) = E @ theta``.  When the model declares its steady
coordinates, ``E`` selects them and the steady condition holds by
construction; otherwise ``E`` is the identity and ``f(x, u) = x`` is an
explicit equality.
"""
from __future__ import annotations

import numpy as np

from ..dynamics import SystemModel, Trajectory
from ..environment import HyperBox, Intersection, KnowledgeState, Setpoint
from ..solver import NlpSpec
from .types import Mode, MpcConfig, StorageState, TrajectoryPair

__all__ = ["ContinuousProblem", "rollout_with_sens", "base_box"]


def rollout_with_sens(model: SystemModel, x0, U):
    """States ``(N+1, n)`` and ``dX_k/dU`` as ``(N+1, n, N*m)``."""
    U = np.ascontiguousarray(U, dtype=float)
    if model.rollout_sens is not None:
        return model.rollout_sens(np.asarray(x0, dtype=float), U)
    N, m = U.shape
    n = model.state_dim
    X = np.zeros((N + 1, n))
    S = np.zeros((N + 1, n, N * m))
    X[0] = x0
    for k in range(N):
        A, B = model.step_jac(X[k], U[k])
        X[k + 1] = model.step_fn(X[k], U[k])
        S[k + 1] = A @ S[k]
        S[k + 1][:, k * m:(k + 1) * m] += B
    return X, S


def base_box(k: KnowledgeState, dim: int):
    lo, hi = np.full(dim, -np.inf), np.full(dim, np.inf)
    atoms = [k.base] if not isinstance(k.base, Intersection) else list(k.base.parts)
    for a in atoms:
        if isinstance(a, HyperBox):
            lo = np.maximum(lo, np.asarray(a.lower, dtype=float))
            hi = np.minimum(hi, np.asarray(a.upper, dtype=float))
    return lo, hi


class _Traj:
    """Index bookkeeping for one shooting trajectory inside ``z``."""

    def __init__(self, cols, sp, safe):
        self.cols = cols          # z indices of the N*m inputs, in time order
        self.sp = sp              # slice of the setpoint parameters
        self.safe = safe          # backup trajectories must stay in sensed disks
        self.disk_of_knot = None  # (N-1, 2) centers
        self.disk_of_setpoint = None


class ContinuousProblem:
    def __init__(self, model: SystemModel, knowledge: KnowledgeState, cfg: MpcConfig, costs,
                 storage: StorageState, x_t, warm: TrajectoryPair, active_9j: bool):
        self.model, self.k, self.cfg, self.costs = model, knowledge, cfg, costs
        self.storage = storage
        self.x_t = np.asarray(x_t, dtype=float)
        self.active_9j = active_9j and cfg.mode == Mode.PROPOSED
        n, m, N = model.state_dim, model.input_dim, cfg.N
        self.n, self.m, self.N = n, m, N
        self.baseline = cfg.mode == Mode.BASELINE
        self.axes = tuple(knowledge.output_axes)
        if max(self.axes) >= n:
            raise ValueError("output axes must index state coordinates")

        lo, hi = base_box(knowledge, n + m)
        self.box_lo, self.box_hi = lo, hi
        # setpoint (x, u) = E @ theta; an explicit steady parametrization removes the
        # rank-deficient equality f(x, u) = x from the problem
        coords = model.steady_coords
        self.steady_eq = coords is None
        coords = tuple(range(n + m)) if coords is None else tuple(coords)
        p = len(coords)
        self.E = np.zeros((n + m, p))
        self.E[list(coords), range(p)] = 1.0
        self.Ex, self.Eu = self.E[:n], self.E[n:]
        self.coords = coords
        self.p = p
        self.obstacles = [(np.asarray(o.center, dtype=float), o.radius) for o in knowledge.known_obstacle_disks()]
        self.centers = np.asarray(knowledge.sensed_centers, dtype=float).reshape(-1, 2)
        self.R = knowledge.sense_radius
        lam, mg = cfg.lam, cfg.margin

        if self.baseline:
            nz = N * m + p
            cols = np.arange(N * m)
            b = _Traj(cols, slice(N * m, nz), safe=True)
            self.trajs = [b]
            self.learning, self.backup = b, b
        else:
            nz = m + 2 * (N - 1) * m + 2 * p
            head = np.arange(m)
            lcols = np.concatenate([head, m + np.arange((N - 1) * m)])
            bcols = np.concatenate([head, m + (N - 1) * m + np.arange((N - 1) * m)])
            off = m + 2 * (N - 1) * m
            self.learning = _Traj(lcols, slice(off, off + p), safe=False)
            self.backup = _Traj(bcols, slice(off + p, off + 2 * p), safe=True)
            self.trajs = [self.learning, self.backup]
        self.nz = nz

        # input bounds hold exactly; setpoints keep a lambda (+ margin) distance to the box
        lower, upper = np.full(nz, -np.inf), np.full(nz, np.inf)
        for tr in self.trajs:
            lower[tr.cols] = np.tile(lo[n:], N)
            upper[tr.cols] = np.tile(hi[n:], N)
            lower[tr.sp], upper[tr.sp] = lo[list(coords)] + lam + mg, hi[list(coords)] - lam - mg
        self.lower, self.upper = lower, upper
        self.state_lo_rows = [i for i in range(n) if np.isfinite(lo[i])]
        self.state_hi_rows = [i for i in range(n) if np.isfinite(hi[i])]
        self._assign_disks(warm)
        self._cache_key = None

    # -- disk assignment for the backup plan -----------------------------

    def _nearest_covering(self, y):
        d = np.hypot(self.centers[:, 0] - y[0], self.centers[:, 1] - y[1])
        inside = np.flatnonzero(d <= self.R)
        idx = inside[np.argmin(d[inside])] if inside.size else int(np.argmin(d))
        return self.centers[idx]

    def _assign_disks(self, warm: TrajectoryPair):
        tr = self.backup
        a0, a1 = self.axes
        knots = [np.asarray(warm.backup.states[k], dtype=float) for k in range(1, self.N)]
        tr.disk_of_knot = np.array([self._nearest_covering((x[a0], x[a1])) for x in knots]).reshape(-1, 2)
        xs = np.asarray(warm.backup_setpoint.x, dtype=float)
        # the setpoint ball must fit inside the disk, so prefer disks that contain it with margin
        d = np.hypot(self.centers[:, 0] - xs[a0], self.centers[:, 1] - xs[a1])
        ok = np.flatnonzero(d <= self.R - self.cfg.lam)
        idx = ok[np.argmin(d[ok])] if ok.size else int(np.argmin(d))
        tr.disk_of_setpoint = self.centers[idx]

    # -- encode / decode ---------------------------------------------------

    def encode(self, pair: TrajectoryPair) -> np.ndarray:
        z = np.zeros(self.nz)
        b = self.backup
        z[b.cols] = np.concatenate([np.asarray(u, dtype=float) for u in pair.backup.inputs])
        z[b.sp] = pair.backup_setpoint.z()[list(self.coords)]
        if not self.baseline:
            L = self.learning
            UL = np.concatenate([np.asarray(u, dtype=float) for u in pair.learning.inputs])
            z[L.cols[self.m:]] = UL[self.m:]
            z[L.sp] = pair.learning_setpoint.z()[list(self.coords)]
        return z

    def decode(self, z) -> TrajectoryPair:
        out = []
        for tr in self.trajs:
            U = z[tr.cols].reshape(self.N, self.m)
            X, _ = rollout_with_sens(self.model, self.x_t, U)
            traj = Trajectory(states=[X[k].copy() for k in range(self.N + 1)],
                              inputs=[U[k].copy() for k in range(self.N)])
            out.append((traj, Setpoint(*self.setpoint_of(z, tr))))
        if self.baseline:
            (b, rb), = out
            return TrajectoryPair(b, b, rb, rb)
        (l, rl), (b, rb) = out
        return TrajectoryPair(l, b, rl, rb)

    def setpoint_of(self, z, tr: _Traj):
        zs = self.E @ z[tr.sp]
        return zs[:self.n].copy(), zs[self.n:].copy()

    # -- evaluation ----------------------------------------------------------

    def _traj_terms(self, z, tr: _Traj):
        n, m, N, nz = self.n, self.m, self.N, self.nz
        U = z[tr.cols].reshape(N, m)
        X, S = rollout_with_sens(self.model, self.x_t, U)
        Jx = np.zeros((N + 1, n, nz))
        Jx[:, :, tr.cols] = S
        xs, us = self.setpoint_of(z, tr)
        Ex, Eu = self.Ex, self.Eu
        Q, Rw = self.costs.Q, self.costs.R
        DX = X[:N] - xs
        DU = U - us
        V = float(np.einsum("ki,ij,kj->", DX, Q, DX) + np.einsum("ki,ij,kj->", DU, Rw, DU))
        QDX = DX @ Q
        gV = np.einsum("ki,kij->j", 2 * QDX, Jx[:N])
        gV[tr.cols] += 2 * (DU @ Rw).ravel()
        gV[tr.sp] -= 2 * (Ex.T @ QDX.sum(axis=0) + Eu.T @ (DU @ Rw).sum(axis=0))

        y = self.model.output_fn(xs, us)
        C, D = self.model.output_jac(xs, us)
        dy = y - self.costs.y_desired
        Pdy = self.costs.P @ dy
        T = float(dy @ Pdy)
        gT = np.zeros(nz)
        gT[tr.sp] = 2 * (Ex.T @ (C.T @ Pdy) + Eu.T @ (D.T @ Pdy))

        # equalities: terminal state, plus the steady state when not parametrized
        eq = [X[N] - xs]
        Jt = Jx[N].copy()
        Jt[:, tr.sp] -= Ex
        jac = [Jt]
        if self.steady_eq:
            A, B = self.model.step_jac(xs, us)
            eq.append(self.model.step_fn(xs, us) - xs)
            Js = np.zeros((n, nz))
            Js[:, tr.sp] = (A - np.eye(n)) @ Ex + B @ Eu
            jac.append(Js)
        ceq = np.concatenate(eq)
        Jeq = np.vstack(jac)

        g_rows, g_jac = [], []
        mg, lam = self.cfg.margin, self.cfg.lam
        knots = slice(1, N)
        Xk, Jk = X[knots], Jx[knots]
        for i in self.state_hi_rows:
            g_rows.append(Xk[:, i] - (self.box_hi[i] - mg))
            g_jac.append(Jk[:, i, :])
        for i in self.state_lo_rows:
            g_rows.append((self.box_lo[i] + mg) - Xk[:, i])
            g_jac.append(-Jk[:, i, :])
        a0, a1 = self.axes
        Y = Xk[:, [a0, a1]]
        JY0, JY1 = Jk[:, a0, :], Jk[:, a1, :]
        ys = xs[[a0, a1]]
        Eys = Ex[[a0, a1]]
        for c, rad in self.obstacles:
            d = Y - c
            g_rows.append((rad + mg) ** 2 - np.sum(d * d, axis=1))
            g_jac.append(-2 * (d[:, :1] * JY0 + d[:, 1:] * JY1))
            ds = ys - c
            g_rows.append(np.array([(rad + lam + mg) ** 2 - ds @ ds]))
            row = np.zeros((1, nz))
            row[0, tr.sp] = -2 * ds @ Eys
            g_jac.append(row)
        if tr.safe and len(self.centers):
            d = Y - tr.disk_of_knot
            g_rows.append(np.sum(d * d, axis=1) - (self.R - mg) ** 2)
            g_jac.append(2 * (d[:, :1] * JY0 + d[:, 1:] * JY1))
            ds = ys - tr.disk_of_setpoint
            g_rows.append(np.array([ds @ ds - (self.R - lam - mg) ** 2]))
            row = np.zeros((1, nz))
            row[0, tr.sp] = 2 * ds @ Eys
            g_jac.append(row)
        g = np.concatenate(g_rows) if g_rows else np.zeros(0)
        Jg = np.vstack(g_jac) if g_jac else np.zeros((0, nz))
        return dict(X=X, V=V, gV=gV, T=T, gT=gT, c=ceq, Jc=Jeq, g=g, Jg=Jg)

    def evaluate(self, z):
        key = z.tobytes()
        if key == self._cache_key:
            return self._cache
        eps = self.cfg.epsilon
        b = self._traj_terms(z, self.backup)
        FB = eps * b["V"] + b["T"]
        gFB = eps * b["gV"] + b["gT"]
        if self.baseline:
            f, gf = FB, gFB
            c, Jc, g, Jg = b["c"], b["Jc"], b["g"], b["Jg"]
        else:
            l = self._traj_terms(z, self.learning)
            f = l["V"] + l["T"] + eps * b["T"]
            gf = l["gV"] + l["gT"] + eps * b["gT"]
            c = np.concatenate([l["c"], b["c"]])
            Jc = np.vstack([l["Jc"], b["Jc"]])
            g = np.concatenate([l["g"], b["g"]])
            Jg = np.vstack([l["Jg"], b["Jg"]])
        if self.active_9j:
            g = np.concatenate([g, [FB - (self.storage.bound - self.cfg.storage_margin)]])
            Jg = np.vstack([Jg, gFB[None, :]])
        self._cache_key = key
        self._cache = dict(f=f, gf=gf, c=c, Jc=Jc, g=g, Jg=Jg, FB=FB)
        return self._cache

    def spec(self) -> NlpSpec:
        def obj(z):
            e = self.evaluate(z)
            return e["f"], e["gf"]

        def eq(z):
            e = self.evaluate(z)
            return e["c"], e["Jc"]

        def ineq(z):
            e = self.evaluate(z)
            return e["g"], e["Jg"]

        layout = {"baseline": self.baseline, "nz": self.nz}
        return NlpSpec(n=self.nz, objective=obj, eq=eq, ineq=ineq, lower=self.lower, upper=self.upper,
                       layout=layout)

    def polish(self, z, iters: int = 8, tol: float = 1e-12):
        """Min-norm Newton steps on the equality constraints only."""
        z = np.clip(np.asarray(z, dtype=float).copy(), self.lower, self.upper)
        for _ in range(iters):
            e = self.evaluate(z)
            c = e["c"]
            if not c.size or np.max(np.abs(c)) <= tol:
                break
            step, *_ = np.linalg.lstsq(e["Jc"], c, rcond=None)
            z = np.clip(z - step, self.lower, self.upper)
        return z

    def clip_start(self, z):
        return np.clip(z, self.lower, self.upper)


def pair_cost_terms(model: SystemModel, costs, cfg: MpcConfig, pair: TrajectoryPair):
    """``(objective, F_backup)`` of a pair, recomputed from the trajectories."""
    from ..costs import tracking_cost

    eps = cfg.epsilon
    VB = tracking_cost(costs, pair.backup, pair.backup_setpoint, cfg.N)
    TB = costs.offset(pair.backup_setpoint, model.output_fn)
    FB = eps * VB + TB
    if cfg.mode == Mode.BASELINE:
        return FB, FB
    VL = tracking_cost(costs, pair.learning, pair.learning_setpoint, cfg.N)
    TL = costs.offset(pair.learning_setpoint, model.output_fn)
    return VL + TL + eps * TB, FB

