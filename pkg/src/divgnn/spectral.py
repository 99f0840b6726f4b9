"""Dense symmetric linear algebra: normalized graph operators, a cyclic Jacobi
eigensolver, and spectrally filtered convolution kernels."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError, NumericError


@dataclass(frozen=True)
class EigenPair:
    eigenvalues: np.ndarray  # ascending
    eigenvectors: np.ndarray  # columns, orthonormal

    def synthesize(self, response: np.ndarray) -> np.ndarray:
        """``U diag(response) U^T``."""
        u = self.eigenvectors
        return (u * response) @ u.T


@dataclass(frozen=True)
class HighPassParams:
    """Parameters of the linear high-pass response ``p * (e * lam + 1 - 2 * a)``.

    With ``a=None`` the offset follows ``e``.
    """

    p: float = 1.0
    e: float = 1.0
    a: float | None = None
    learn_p: bool = True
    learn_e: bool = True
    learn_a: bool = False

    def __post_init__(self):
        for v in (self.p, self.e, self.offset):
            if not math.isfinite(v):
                raise InputError("high-pass parameters must be finite")

    @property
    def offset(self) -> float:
        return self.e if self.a is None else self.a

    def response(self, lam) -> np.ndarray:
        return high_pass_response(lam, self.p, self.e, self.offset)


def high_pass_response(lam, p: float, e: float, a: float) -> np.ndarray:
    return p * (e * np.asarray(lam, dtype=float) + 1.0 - 2.0 * a)


def normalized_adjacency(adj: np.ndarray) -> np.ndarray:
    """``D~^-1/2 (A + I) D~^-1/2`` with ``D~`` the row sums of ``A + I``."""
    a = np.asarray(adj, dtype=float) + np.eye(len(adj))
    d = 1.0 / np.sqrt(a.sum(axis=1))
    return d[:, None] * a * d[None, :]


def normalized_laplacian(adj: np.ndarray) -> np.ndarray:
    """``I - D^-1/2 A D^-1/2``; isolated nodes get a zero scaling entry."""
    a = np.asarray(adj, dtype=float)
    deg = a.sum(axis=1)
    d = np.zeros_like(deg)
    nz = deg > 0
    d[nz] = 1.0 / np.sqrt(deg[nz])
    return np.eye(len(a)) - d[:, None] * a * d[None, :]


def _rotate(a: np.ndarray, v: np.ndarray, p: int, q: int) -> None:
    apq = a[p, q]
    app, aqq = a[p, p], a[q, q]
    theta = (aqq - app) / (2.0 * apq)
    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
    c = 1.0 / math.sqrt(t * t + 1.0)
    s = t * c

    col_p, col_q = a[:, p].copy(), a[:, q].copy()
    a[:, p] = c * col_p - s * col_q
    a[:, q] = s * col_p + c * col_q
    a[p, :] = a[:, p]
    a[q, :] = a[:, q]
    a[p, p] = app - t * apq
    a[q, q] = aqq + t * apq
    a[p, q] = a[q, p] = 0.0

    vp, vq = v[:, p].copy(), v[:, q].copy()
    v[:, p] = c * vp - s * vq
    v[:, q] = s * vp + c * vq


def jacobi_eigh(m: np.ndarray, max_sweeps: int = 100, sym_tol: float = 1e-12) -> EigenPair:
    """Eigendecomposition of a dense symmetric matrix by cyclic Jacobi sweeps.

    Iterates until the off-diagonal Frobenius norm drops below
    ``1e-12 * n * max(1, ||m||_F)``. Eigenvalues are returned ascending and
    each eigenvector is signed so its largest-magnitude entry is positive.
    """
    m = np.array(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InputError(f"expected a square matrix, got shape {m.shape}")
    n = m.shape[0]
    scale = max(1.0, float(np.abs(m).max(initial=0.0)))
    if np.abs(m - m.T).max(initial=0.0) > sym_tol * scale:
        raise InputError("matrix is not symmetric within tolerance")
    if not np.all(np.isfinite(m)):
        raise NumericError("matrix has non-finite entries")

    a = 0.5 * (m + m.T)
    v = np.eye(n)
    tol = 1e-12 * n * max(1.0, float(np.linalg.norm(a)))
    # entries this small relative to the diagonal cannot change it in double precision
    tiny = np.finfo(float).eps * 1e-3
    iu = np.triu_indices(n, 1)
    for _ in range(max_sweeps):
        off = math.sqrt(2.0 * float(np.sum(a[iu] ** 2)))
        if off <= tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0 or abs(apq) <= tiny * (abs(a[p, p]) + abs(a[q, q])):
                    a[p, q] = a[q, p] = 0.0
                    continue
                _rotate(a, v, p, q)
    else:
        off = math.sqrt(2.0 * float(np.sum(a[iu] ** 2)))
        if off > tol:
            raise NumericError(f"Jacobi iteration did not converge in {max_sweeps} sweeps (off-norm {off:.3e})")

    lam = np.diag(a).copy()
    order = np.argsort(lam, kind="stable")
    lam, v = lam[order], v[:, order]
    if n:
        pivot = np.argmax(np.abs(v), axis=0)
        signs = np.sign(v[pivot, np.arange(n)])
        signs[signs == 0] = 1.0
        v = v * signs
    return EigenPair(lam, v)


sym_eigendecompose = jacobi_eigh


def laplacian_eigensystem(adj: np.ndarray) -> EigenPair:
    return jacobi_eigh(normalized_laplacian(adj))


def high_pass_kernel(adj: np.ndarray, hp: HighPassParams, eig: EigenPair | None = None) -> np.ndarray:
    """Convolution kernel ``U diag(F(lam)) U^T`` over the normalized Laplacian."""
    if eig is None:
        eig = laplacian_eigensystem(adj)
    return eig.synthesize(hp.response(eig.eigenvalues))
