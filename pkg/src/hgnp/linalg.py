"""Dense symmetric eigen kernels, Kronecker vectors and quadratic forms.

Everything here works on 64-bit numpy arrays. ``sym_top_eigenpair`` returns the
eigenpair of largest magnitude, which is the quantity the curvature code needs
for each Kronecker factor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ConvergenceError(RuntimeError):
    """Raised when an iterative eigensolver fails to reach its tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class EigenPair:
    value: float
    vector: np.ndarray


def _check_symmetric(S: np.ndarray) -> np.ndarray:
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1] or S.shape[0] < 1:
        raise ValueError(f"expected a non-empty square matrix, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise ValueError("matrix contains NaN or Inf")
    scale = max(1.0, float(np.max(np.abs(S))))
    if np.max(np.abs(S - S.T)) > 1e-8 * scale:
        raise ValueError("matrix is not symmetric")
    return S


def canonical_sign(v: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Flip ``v`` so that its first entry of magnitude above ``eps`` is positive."""
    nz = np.flatnonzero(np.abs(v) > eps)
    if nz.size and v[nz[0]] < 0:
        return -v
    return v


def _off_norm(A: np.ndarray) -> float:
    return float(np.linalg.norm(A[~np.eye(A.shape[0], dtype=bool)]))


def jacobi_eigh(S: np.ndarray, tol: float = 1e-14, max_sweeps: int = 100):
    """Full eigendecomposition by cyclic Jacobi rotations.

    Returns ``(values, vectors)`` with eigenvectors in the columns, in the
    diagonal order the rotations leave them (unsorted).
    """
    A = _check_symmetric(S).copy()
    n = A.shape[0]
    V = np.eye(n)
    total = np.sqrt(np.sum(A * A))
    for _ in range(max_sweeps):
        off = _off_norm(A)
        if off <= tol * max(total, 1e-300):
            return np.diag(A).copy(), V
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                diff = A[q, q] - A[p, p]
                if apq == 0.0 or abs(apq) < 1e-300:
                    A[p, q] = A[q, p] = 0.0
                    continue
                if abs(apq) < 1e-18 * abs(diff):
                    # theta would overflow; the small-angle limit is exact here
                    t = apq / diff
                else:
                    theta = diff / (2.0 * apq)
                    t = 1.0 if theta == 0.0 else np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                Ap, Aq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * Ap - s * Aq
                A[:, q] = s * Ap + c * Aq
                Ap, Aq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * Ap - s * Aq
                A[q, :] = s * Ap + c * Aq
                A[p, q] = A[q, p] = 0.0
                Vp, Vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * Vp - s * Vq
                V[:, q] = s * Vp + c * Vq
    off = _off_norm(A)
    raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps", off)


def _power_top(S: np.ndarray, tol: float, max_iter: int):
    # Iterate on S^2 so the dominant |lambda| wins regardless of sign.
    n = S.shape[0]
    v = np.full(n, 1.0 / np.sqrt(n))
    lam = float(v @ S @ v)
    for _ in range(max_iter):
        w = S @ (S @ v)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0, v
        v = w / norm
        lam = float(v @ S @ v)
        if np.linalg.norm(S @ v - lam * v) <= tol * max(1.0, abs(lam)):
            return lam, v
    res = float(np.linalg.norm(S @ v - lam * v))
    raise ConvergenceError(f"power iteration did not converge in {max_iter} steps", res)


def sym_top_eigenpair(
    S: np.ndarray, tol: float = 1e-10, max_iter: int = 10_000, method: str = "lapack"
) -> EigenPair:
    """Eigenpair of largest absolute eigenvalue of a symmetric matrix.

    ``method`` is ``"lapack"`` (default), ``"jacobi"`` or ``"power"``. Ties in
    magnitude go to the lowest index in the solver's ordering, and the vector
    is sign-normalised with :func:`canonical_sign`.

    Raises:
        ValueError: non-square, non-symmetric or non-finite input.
        ConvergenceError: residual ``||S v - lambda v||`` above
            ``tol * max(1, |lambda|)``.
    """
    S = _check_symmetric(S)
    if method == "lapack":
        values, vectors = np.linalg.eigh(S)
        k = int(np.argmax(np.abs(values)))
        lam, v = float(values[k]), vectors[:, k]
    elif method == "jacobi":
        values, vectors = jacobi_eigh(S)
        k = int(np.argmax(np.abs(values)))
        lam, v = float(values[k]), vectors[:, k]
    elif method == "power":
        lam, v = _power_top(S, tol, max_iter)
    else:
        raise ValueError(f"unknown eigensolver method {method!r}")
    v = canonical_sign(v / np.linalg.norm(v))
    residual = float(np.linalg.norm(S @ v - lam * v))
    if residual > tol * max(1.0, abs(lam)):
        raise ConvergenceError("eigenpair residual above tolerance", residual)
    return EigenPair(lam, v)


def kron_vec(u: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Kronecker product of two vectors: ``out[i*len(w) + j] = u[i] * w[j]``."""
    u = np.asarray(u, dtype=np.float64).ravel()
    w = np.asarray(w, dtype=np.float64).ravel()
    if u.size == 0 or w.size == 0:
        raise ValueError("kron_vec needs non-empty vectors")
    return np.outer(u, w).ravel()


def quadratic_form(S: np.ndarray, v: np.ndarray) -> float:
    S = np.asarray(S, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64).ravel()
    if S.ndim != 2 or S.shape != (v.size, v.size):
        raise ValueError(f"dimension mismatch: matrix {S.shape} vs vector {v.size}")
    return float(v @ S @ v)
