"""Numba @njit kernels for the hot inner loops.

Same contract as ``numpy_backend``; see that module for the layout of the
window arrays. Compiled with ``cache=True`` so the JIT cost is paid once per
machine, not once per process.
"""

from __future__ import annotations

import numpy as np
from numba import njit

NAME = "numba"


@njit(cache=True)
def window_objective(x, u, y, xhat, pi_inv, q_inv, r_inv, dt):
    N = u.shape[0]
    F = 0.0
    for r in range(3):
        acc = 0.0
        for c in range(3):
            acc += pi_inv[r, c] * (x[0, c] - xhat[c])
        F += (x[0, r] - xhat[r]) * acc
    for i in range(N):
        c_ = np.cos(x[i, 2])
        s_ = np.sin(x[i, 2])
        w0 = x[i + 1, 0] - (x[i, 0] + dt * u[i, 0] * c_)
        w1 = x[i + 1, 1] - (x[i, 1] + dt * u[i, 0] * s_)
        w2 = x[i + 1, 2] - (x[i, 2] + dt * u[i, 1])
        v0 = y[i, 0] - x[i, 0]
        v1 = y[i, 1] - x[i, 1]
        F += q_inv[0] * w0 * w0 + q_inv[1] * w1 * w1 + q_inv[2] * w2 * w2
        F += r_inv[0] * v0 * v0 + r_inv[1] * v1 * v1
    return F


@njit(cache=True)
def window_eval(x, u, y, xhat, pi_inv, q_inv, r_inv, dt):
    N = u.shape[0]
    F = 0.0
    g = np.zeros((N + 1, 3))
    diag = np.zeros((N + 1, 3, 3))
    off = np.zeros((N, 3, 3))

    for r in range(3):
        acc = 0.0
        for c in range(3):
            acc += pi_inv[r, c] * (x[0, c] - xhat[c])
            diag[0, r, c] += 2.0 * pi_inv[r, c]
        F += (x[0, r] - xhat[r]) * acc
        g[0, r] += 2.0 * acc

    for i in range(N):
        c_ = np.cos(x[i, 2])
        s_ = np.sin(x[i, 2])
        a = dt * u[i, 0]
        t0 = -a * s_
        t1 = a * c_
        w0 = x[i + 1, 0] - (x[i, 0] + a * c_)
        w1 = x[i + 1, 1] - (x[i, 1] + a * s_)
        w2 = x[i + 1, 2] - (x[i, 2] + dt * u[i, 1])
        v0 = y[i, 0] - x[i, 0]
        v1 = y[i, 1] - x[i, 1]
        qw0 = q_inv[0] * w0
        qw1 = q_inv[1] * w1
        qw2 = q_inv[2] * w2
        rv0 = r_inv[0] * v0
        rv1 = r_inv[1] * v1

        F += w0 * qw0 + w1 * qw1 + w2 * qw2 + v0 * rv0 + v1 * rv1

        g[i + 1, 0] += 2.0 * qw0
        g[i + 1, 1] += 2.0 * qw1
        g[i + 1, 2] += 2.0 * qw2
        g[i, 0] -= 2.0 * (qw0 + rv0)
        g[i, 1] -= 2.0 * (qw1 + rv1)
        g[i, 2] -= 2.0 * (t0 * qw0 + t1 * qw1 + qw2)

        diag[i + 1, 0, 0] += 2.0 * q_inv[0]
        diag[i + 1, 1, 1] += 2.0 * q_inv[1]
        diag[i + 1, 2, 2] += 2.0 * q_inv[2]

        diag[i, 0, 0] += 2.0 * (q_inv[0] + r_inv[0])
        diag[i, 1, 1] += 2.0 * (q_inv[1] + r_inv[1])
        diag[i, 0, 2] += 2.0 * q_inv[0] * t0
        diag[i, 2, 0] += 2.0 * q_inv[0] * t0
        diag[i, 1, 2] += 2.0 * q_inv[1] * t1
        diag[i, 2, 1] += 2.0 * q_inv[1] * t1
        diag[i, 2, 2] += 2.0 * (
            q_inv[0] * t0 * t0 + q_inv[1] * t1 * t1 + q_inv[2] + a * (c_ * qw0 + s_ * qw1)
        )

        off[i, 0, 0] = -2.0 * q_inv[0]
        off[i, 1, 1] = -2.0 * q_inv[1]
        off[i, 2, 0] = -2.0 * q_inv[0] * t0
        off[i, 2, 1] = -2.0 * q_inv[1] * t1
        off[i, 2, 2] = -2.0 * q_inv[2]
    return F, g, diag, off


@njit(cache=True)
def bt_matvec(diag, off, v):
    B, n, _ = diag.shape
    out = np.zeros(B * n)
    for i in range(B):
        base = i * n
        for r in range(n):
            acc = 0.0
            for c in range(n):
                acc += diag[i, r, c] * v[base + c]
            out[base + r] += acc
        if i + 1 < B:
            for r in range(n):
                acc = 0.0
                accT = 0.0
                for c in range(n):
                    acc += off[i, r, c] * v[base + n + c]
                    accT += off[i, c, r] * v[base + c]
                out[base + r] += acc
                out[base + n + r] += accT
    return out


@njit(cache=True)
def bt_matmat_beta(diag, off, beta, K):
    B, n, _ = diag.shape
    d2 = K.shape[1]
    out = np.zeros((B * n, d2))
    for i in range(B):
        base = i * n
        for r in range(n):
            for j in range(d2):
                acc = beta * K[base + r, j]
                for c in range(n):
                    acc += diag[i, r, c] * K[base + c, j]
                out[base + r, j] += acc
        if i + 1 < B:
            for r in range(n):
                for j in range(d2):
                    acc = 0.0
                    accT = 0.0
                    for c in range(n):
                        acc += off[i, r, c] * K[base + n + c, j]
                        accT += off[i, c, r] * K[base + c, j]
                    out[base + r, j] += acc
                    out[base + n + r, j] += accT
    return out


@njit(cache=True)
def bt_power_lmax(diag, off, v0, tol, max_iter):
    v = v0 / np.linalg.norm(v0)
    lam = 0.0
    for it in range(1, max_iter + 1):
        w = bt_matvec(diag, off, v)
        lam_new = 0.0
        for j in range(v.shape[0]):
            lam_new += v[j] * w[j]
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0, v, it
        v = w / nw
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            return lam_new, v, it
        lam = lam_new
    return lam, v, max_iter
