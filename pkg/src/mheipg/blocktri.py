"""Symmetric block-tridiagonal matrices and the few operations solvers need.

The second-derivative matrix of a horizon objective couples only consecutive
window states, so it is stored as B diagonal blocks plus B-1 upper
off-diagonal blocks; the sub-diagonal is the transpose family. Matrix-vector
and matrix-matrix products run in O(B n^2) and O(B^2 n^3) instead of the
dense O(B^2 n^2) / O(B^3 n^3), which is what keeps per-window cost growing
quadratically in the horizon length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import get_backend

__all__ = ["BlockTridiagonal", "lambda_max", "apply_plus_beta"]


@dataclass(frozen=True)
class BlockTridiagonal:
    """Blocks of a symmetric block-tridiagonal matrix.

    diag: (B, n, n) symmetric diagonal blocks.
    off:  (B-1, n, n) blocks at (i, i+1); block (i+1, i) is off[i].T, so the
          assembled matrix is symmetric by construction.
    """

    diag: np.ndarray
    off: np.ndarray

    def __post_init__(self):
        d = np.ascontiguousarray(self.diag, dtype=np.float64)
        o = np.ascontiguousarray(self.off, dtype=np.float64)
        if d.ndim != 3 or d.shape[1] != d.shape[2]:
            raise ValueError(f"diag must be (B, n, n), got {d.shape}")
        if o.shape != (d.shape[0] - 1, d.shape[1], d.shape[1]):
            raise ValueError(f"off must be (B-1, n, n), got {o.shape}")
        object.__setattr__(self, "diag", d)
        object.__setattr__(self, "off", o)

    @property
    def nblocks(self) -> int:
        return self.diag.shape[0]

    @property
    def blocksize(self) -> int:
        return self.diag.shape[1]

    @property
    def dim(self) -> int:
        return self.nblocks * self.blocksize

    def to_dense(self) -> np.ndarray:
        B, n = self.nblocks, self.blocksize
        H = np.zeros((B * n, B * n))
        for i in range(B):
            H[i * n:(i + 1) * n, i * n:(i + 1) * n] = self.diag[i]
        for i in range(B - 1):
            H[i * n:(i + 1) * n, (i + 1) * n:(i + 2) * n] = self.off[i]
            H[(i + 1) * n:(i + 2) * n, i * n:(i + 1) * n] = self.off[i].T
        return H

    def matvec(self, v, backend=None):
        k = get_backend(backend)
        return k.bt_matvec(self.diag, self.off, np.asarray(v, dtype=np.float64))


def apply_plus_beta(H, K, beta, backend=None):
    """Compute (H + beta I) @ K for block-tridiagonal or dense H."""
    if isinstance(H, BlockTridiagonal):
        k = get_backend(backend)
        return k.bt_matmat_beta(H.diag, H.off, float(beta), np.ascontiguousarray(K, dtype=np.float64))
    return H @ K + beta * K


def lambda_max(H, v0=None, tol=1e-6, max_iter=500, backend=None):
    """Largest eigenvalue of a symmetric PSD matrix by power iteration.

    Returns (lmax, v) where v is the final unit iterate, suitable for
    warm-starting the next call. Dense inputs take the same path through a
    dense matvec.
    """
    if isinstance(H, BlockTridiagonal):
        k = get_backend(backend)
        dim = H.dim
        if v0 is None or len(v0) != dim:
            v0 = np.full(dim, 1.0 / np.sqrt(dim))
        lmax, v, _ = k.bt_power_lmax(H.diag, H.off, np.asarray(v0, dtype=np.float64), tol, max_iter)
        return float(lmax), v
    H = np.asarray(H, dtype=np.float64)
    dim = H.shape[0]
    if v0 is None or len(v0) != dim:
        v0 = np.full(dim, 1.0 / np.sqrt(dim))
    v = np.asarray(v0, dtype=np.float64)
    lam = 0.0
    for _ in range(max_iter):
        w = H @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0, v
        w /= nw
        lam_new = w @ (H @ w)
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            return float(lam_new), w
        lam, v = lam_new, w
    return float(lam), v
