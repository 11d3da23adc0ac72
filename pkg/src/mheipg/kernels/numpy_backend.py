"""Pure-numpy kernels: the fallback twin of the numba backend.

``window_*`` kernels are specialized to the unicycle (n=3, m=2, p=2) with
the dynamics inlined; ``bt_*`` kernels are generic block-tridiagonal
operations. Signatures and results match ``numba_backend`` exactly up to
floating-point association.
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"


def _residuals(x, u, y, dt):
    # drift applied to x_0..x_{N-1}, residuals against x_1..x_N and y
    th = x[:-1, 2]
    c = np.cos(th)
    s = np.sin(th)
    fx = x[:-1].copy()
    fx[:, 0] += dt * u[:, 0] * c
    fx[:, 1] += dt * u[:, 0] * s
    fx[:, 2] += dt * u[:, 1]
    w = x[1:] - fx
    v = y - x[:-1, :2]
    return c, s, w, v


def window_objective(x, u, y, xhat, pi_inv, q_inv, r_inv, dt):
    _, _, w, v = _residuals(x, u, y, dt)
    d0 = x[0] - xhat
    return float(d0 @ (pi_inv @ d0) + np.sum(w * w * q_inv) + np.sum(v * v * r_inv))


def window_eval(x, u, y, xhat, pi_inv, q_inv, r_inv, dt):
    """Objective, gradient blocks, and Hessian blocks in one pass."""
    N = len(u)
    c, s, w, v = _residuals(x, u, y, dt)
    d0 = x[0] - xhat
    qw = w * q_inv
    rv = v * r_inv
    F = float(d0 @ (pi_inv @ d0) + np.sum(w * qw) + np.sum(v * rv))

    a = dt * u[:, 0]
    t0 = -a * s  # d f1 / d heading
    t1 = a * c   # d f2 / d heading

    g = np.zeros((N + 1, 3))
    g[0] = 2.0 * (pi_inv @ d0)
    g[1:] += 2.0 * qw
    g[:-1, 0] -= 2.0 * (qw[:, 0] + rv[:, 0])
    g[:-1, 1] -= 2.0 * (qw[:, 1] + rv[:, 1])
    g[:-1, 2] -= 2.0 * (t0 * qw[:, 0] + t1 * qw[:, 1] + qw[:, 2])

    diag = np.zeros((N + 1, 3, 3))
    diag[0] += 2.0 * pi_inv
    for k in range(3):
        diag[1:, k, k] += 2.0 * q_inv[k]
    # J_f^T Q^{-1} J_f with J_f columns e1, e2, (t0, t1, 1)
    diag[:-1, 0, 0] += 2.0 * q_inv[0]
    diag[:-1, 1, 1] += 2.0 * q_inv[1]
    diag[:-1, 0, 2] += 2.0 * q_inv[0] * t0
    diag[:-1, 2, 0] += 2.0 * q_inv[0] * t0
    diag[:-1, 1, 2] += 2.0 * q_inv[1] * t1
    diag[:-1, 2, 1] += 2.0 * q_inv[1] * t1
    diag[:-1, 2, 2] += 2.0 * (q_inv[0] * t0 * t0 + q_inv[1] * t1 * t1 + q_inv[2])
    # J_h^T R^{-1} J_h picks the position components
    diag[:-1, 0, 0] += 2.0 * r_inv[0]
    diag[:-1, 1, 1] += 2.0 * r_inv[1]
    # curvature term: only the (heading, heading) second derivatives are nonzero
    diag[:-1, 2, 2] += 2.0 * a * (c * qw[:, 0] + s * qw[:, 1])

    off = np.zeros((N, 3, 3))
    off[:, 0, 0] = -2.0 * q_inv[0]
    off[:, 1, 1] = -2.0 * q_inv[1]
    off[:, 2, 0] = -2.0 * q_inv[0] * t0
    off[:, 2, 1] = -2.0 * q_inv[1] * t1
    off[:, 2, 2] = -2.0 * q_inv[2]
    return F, g, diag, off


def bt_matvec(diag, off, v):
    B, n, _ = diag.shape
    vb = v.reshape(B, n)
    out = np.einsum("bij,bj->bi", diag, vb)
    if B > 1:
        out[:-1] += np.einsum("bij,bj->bi", off, vb[1:])
        out[1:] += np.einsum("bji,bj->bi", off, vb[:-1])
    return out.reshape(B * n)


def bt_matmat_beta(diag, off, beta, K):
    B, n, _ = diag.shape
    Kb = K.reshape(B, n, -1)
    out = np.einsum("bij,bjk->bik", diag, Kb) + beta * Kb
    if B > 1:
        out[:-1] += np.einsum("bij,bjk->bik", off, Kb[1:])
        out[1:] += np.einsum("bji,bjk->bik", off, Kb[:-1])
    return out.reshape(K.shape)


def bt_power_lmax(diag, off, v0, tol, max_iter):
    """Largest eigenvalue of the assembled PSD matrix by power iteration."""
    v = v0 / np.linalg.norm(v0)
    lam = 0.0
    for it in range(1, max_iter + 1):
        w = bt_matvec(diag, off, v)
        lam_new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0, v, it
        v = w / nw
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            return lam_new, v, it
        lam = lam_new
    return lam, v, max_iter
