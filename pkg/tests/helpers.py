"""Shared builders for tests: small NLP instances and car problems."""
import math
from dataclasses import replace

import numpy as np

from safexplore.environment import sense, update_knowledge
from safexplore.mpc import ContinuousProblem, StorageState, initial_candidate
from safexplore.solver import NlpSpec


def disk_instance(center=(2.0, 0.0), radius=0.8, goal=(4.0, 0.0), weight=10.0):
    """Two-step single integrator from the origin; the middle point avoids one disk.

    Variables are (u0, u1) in R^4; objective |u0|^2 + |u1|^2 + w |x2 - goal|^2.
    """
    c, g = np.asarray(center), np.asarray(goal)

    def obj(z):
        u0, u1 = z[:2], z[2:]
        x2 = u0 + u1
        d = x2 - g
        f = u0 @ u0 + u1 @ u1 + weight * d @ d
        gr = np.concatenate([2 * u0 + 2 * weight * d, 2 * u1 + 2 * weight * d])
        return f, gr

    def ineq(z):
        d = z[:2] - c
        return np.array([radius**2 - d @ d]), np.array([[-2 * d[0], -2 * d[1], 0.0, 0.0]])

    return NlpSpec(n=4, objective=obj, ineq=ineq, lower=np.full(4, -3.0), upper=np.full(4, 3.0))


def disk_instance_oracle(center=(2.0, 0.0), radius=0.8, goal=(4.0, 0.0), weight=10.0, h=0.05):
    """Grid over u0 at resolution h; the optimal u1 given x1 is closed-form."""
    c, g = np.asarray(center), np.asarray(goal)
    a = np.arange(-3.0, 3.0 + h / 2, h)
    A, B = np.meshgrid(a, a, indexing="ij")
    ok = (A - c[0]) ** 2 + (B - c[1]) ** 2 >= radius**2
    # min over u1 of |u1|^2 + w |x1 + u1 - g|^2 is w/(1+w) |g - x1|^2 (u1 unconstrained inside the box)
    val = A**2 + B**2 + weight / (1 + weight) * ((g[0] - A) ** 2 + (g[1] - B) ** 2)
    val = np.where(ok, val, np.inf)
    return float(val.min())


def car_problem(car, N=8, active=False, S=None, x0=None):
    """A sensed car problem at the initial state with a feasible warm start."""
    cfg = replace(car.mpc, N=N)
    x0 = car.x0 if x0 is None else np.asarray(x0, dtype=float)
    k = update_knowledge(car.knowledge, sense(car.knowledge, np.concatenate([x0, np.zeros(2)])))
    costs = replace(car.costs, N=N)
    warm = initial_candidate(car.model, k, cfg, costs, x0)
    storage = StorageState.initial(cfg) if S is None else StorageState(S=S, F_hat=0.0)
    prob = ContinuousProblem(car.model, k, cfg, costs, storage, x0, warm, active)
    return prob, warm, k, cfg, costs, storage


def random_points(prob, rng, count, spread=0.5):
    """Points around the warm start, clipped to the variable bounds."""
    lo = np.where(np.isfinite(prob.lower), prob.lower, -5.0)
    hi = np.where(np.isfinite(prob.upper), prob.upper, 5.0)
    pts = []
    for _ in range(count):
        z = rng.uniform(lo, hi)
        pts.append(np.clip(z * spread, prob.lower, prob.upper))
    return pts


def random_grid_document(rng, index=0):
    """A finite integrator scenario: a line of cells with random blocked cells,
    a safe prefix around the start and random weights."""
    L = int(rng.integers(6, 13))
    reach = int(rng.integers(1, 3))
    blocked = {int(c) for c in rng.choice(np.arange(3, L + 1), size=int(rng.integers(0, 3)), replace=False)}
    free = [c for c in range(L + 1) if c not in blocked]
    edge = int(rng.integers(2, max(3, L // 2) + 1))
    truth = [[x, u] for x in free for u in range(-reach, reach + 1) if x + u in free]
    safe = [[x, u] for x, u in truth if x <= edge and x + u <= edge]
    return {
        "name": f"random_grid_{index}",
        "model": "integrator",
        "x0": 0,
        "max_steps": 40,
        "mpc": {"N": int(rng.integers(2, 4)), "epsilon": float(rng.choice([1.0, 0.1])), "alpha": 1.0,
                "S0": float(rng.choice([0.0, 1.0, 5.0])), "mode": "proposed"},
        "costs": {"kind": "grid", "q": int(rng.integers(1, 4)), "r": int(rng.integers(1, 4)),
                  "p": int(rng.integers(1, 6)), "y_desired": L + 1},
        "finite": {"truth": truth, "safe": safe},
    }
