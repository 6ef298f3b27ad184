"""Pure NumPy versions of the bicycle kernels.

Signatures and results match the compiled module ``_bicycle`` exactly; this
module is used whenever the extension is not built.
"""
import math

import numpy as np


def bicycle_step(x, u, dt, lr):
    px, py, psi, v, beta = x
    a = psi + beta
    return np.array([
        px + dt * v * math.cos(a),
        py + dt * v * math.sin(a),
        psi + dt * (v / lr) * math.sin(beta),
        v + dt * u[0],
        beta + dt * u[1],
    ])


def bicycle_rollout(x0, U, dt, lr):
    U = np.asarray(U, dtype=float)
    N = U.shape[0]
    X = np.empty((N + 1, 5))
    X[0] = x0
    for k in range(N):
        X[k + 1] = bicycle_step(X[k], U[k], dt, lr)
    return X


def bicycle_rollout_sens(x0, U, dt, lr):
    """Roll out and return ``(X, S)`` with ``S[k] = dX[k] / dU.ravel()``."""
    U = np.asarray(U, dtype=float)
    N = U.shape[0]
    X = np.empty((N + 1, 5))
    S = np.zeros((N + 1, 5, 2 * N))
    X[0] = x0
    for k in range(N):
        px, py, psi, v, beta = X[k]
        a = psi + beta
        c, s = math.cos(a), math.sin(a)
        sb, cb = math.sin(beta), math.cos(beta)
        Sk = S[k]
        Sn = S[k + 1]
        # A = I + dt * (rows 0..2 couple to psi, v, beta)
        Sn[:] = Sk
        Sn[0] += dt * (-v * s * Sk[2] + c * Sk[3] - v * s * Sk[4])
        Sn[1] += dt * (v * c * Sk[2] + s * Sk[3] + v * c * Sk[4])
        Sn[2] += dt * (sb / lr * Sk[3] + v * cb / lr * Sk[4])
        Sn[3, 2 * k] += dt
        Sn[4, 2 * k + 1] += dt
        X[k + 1, 0] = px + dt * v * c
        X[k + 1, 1] = py + dt * v * s
        X[k + 1, 2] = psi + dt * (v / lr) * sb
        X[k + 1, 3] = v + dt * U[k, 0]
        X[k + 1, 4] = beta + dt * U[k, 1]
    return X, S
