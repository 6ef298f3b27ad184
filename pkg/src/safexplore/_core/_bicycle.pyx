# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled bicycle kernels; see ``_fallback`` for the reference versions."""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin

cnp.import_array()


def bicycle_step(x, u, double dt, double lr):
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    out = np.empty(5)
    cdef double[::1] o = out
    cdef double a = xv[2] + xv[4]
    o[0] = xv[0] + dt * xv[3] * cos(a)
    o[1] = xv[1] + dt * xv[3] * sin(a)
    o[2] = xv[2] + dt * (xv[3] / lr) * sin(xv[4])
    o[3] = xv[3] + dt * uv[0]
    o[4] = xv[4] + dt * uv[1]
    return out


def bicycle_rollout(x0, U, double dt, double lr):
    cdef double[:, ::1] Uv = np.ascontiguousarray(U, dtype=np.float64)
    cdef Py_ssize_t N = Uv.shape[0]
    X = np.empty((N + 1, 5))
    cdef double[:, ::1] Xv = X
    cdef double[::1] x0v = np.ascontiguousarray(x0, dtype=np.float64)
    cdef Py_ssize_t k, i
    cdef double a
    for i in range(5):
        Xv[0, i] = x0v[i]
    for k in range(N):
        a = Xv[k, 2] + Xv[k, 4]
        Xv[k + 1, 0] = Xv[k, 0] + dt * Xv[k, 3] * cos(a)
        Xv[k + 1, 1] = Xv[k, 1] + dt * Xv[k, 3] * sin(a)
        Xv[k + 1, 2] = Xv[k, 2] + dt * (Xv[k, 3] / lr) * sin(Xv[k, 4])
        Xv[k + 1, 3] = Xv[k, 3] + dt * Uv[k, 0]
        Xv[k + 1, 4] = Xv[k, 4] + dt * Uv[k, 1]
    return X


def bicycle_rollout_sens(x0, U, double dt, double lr):
    cdef double[:, ::1] Uv = np.ascontiguousarray(U, dtype=np.float64)
    cdef Py_ssize_t N = Uv.shape[0]
    cdef Py_ssize_t M = 2 * N
    X = np.empty((N + 1, 5))
    S = np.zeros((N + 1, 5, M))
    cdef double[:, ::1] Xv = X
    cdef double[:, :, ::1] Sv = S
    cdef double[::1] x0v = np.ascontiguousarray(x0, dtype=np.float64)
    cdef Py_ssize_t k, i, j, jmax
    cdef double v, a, c, s, sb, cb, s2, s3, s4
    for i in range(5):
        Xv[0, i] = x0v[i]
    for k in range(N):
        v = Xv[k, 3]
        a = Xv[k, 2] + Xv[k, 4]
        c = cos(a)
        s = sin(a)
        sb = sin(Xv[k, 4])
        cb = cos(Xv[k, 4])
        # columns beyond 2k are still zero in S[k]
        jmax = 2 * k
        for j in range(jmax):
            s2 = Sv[k, 2, j]
            s3 = Sv[k, 3, j]
            s4 = Sv[k, 4, j]
            Sv[k + 1, 0, j] = Sv[k, 0, j] + dt * (-v * s * s2 + c * s3 - v * s * s4)
            Sv[k + 1, 1, j] = Sv[k, 1, j] + dt * (v * c * s2 + s * s3 + v * c * s4)
            Sv[k + 1, 2, j] = s2 + dt * (sb / lr * s3 + v * cb / lr * s4)
            Sv[k + 1, 3, j] = s3
            Sv[k + 1, 4, j] = s4
        Sv[k + 1, 3, 2 * k] = dt
        Sv[k + 1, 4, 2 * k + 1] = dt
        Xv[k + 1, 0] = Xv[k, 0] + dt * v * c
        Xv[k + 1, 1] = Xv[k, 1] + dt * v * s
        Xv[k + 1, 2] = Xv[k, 2] + dt * (v / lr) * sb
        Xv[k + 1, 3] = v + dt * Uv[k, 0]
        Xv[k + 1, 4] = Xv[k, 4] + dt * Uv[k, 1]
    return X, S
