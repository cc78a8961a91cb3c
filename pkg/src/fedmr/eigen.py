"""Cyclic Jacobi eigenvalue solver for small symmetric matrices."""

from __future__ import annotations

import numpy as np

from fedmr.errors import ContractError, ConvergenceError

SYMMETRY_TOL = 1e-9
OFFDIAG_TOL = 1e-12
MAX_SWEEPS = 100


def _off_norm(a: np.ndarray) -> float:
    upper = np.triu(a, 1)
    return float(np.sqrt(2.0 * np.sum(upper * upper)))


def sym_eigenvalues(m, tol: float = OFFDIAG_TOL) -> np.ndarray:
    """Eigenvalues of a symmetric matrix, sorted descending.

    Sweeps over all (p, q) pairs, zeroing ``a[p, q]`` with one rotation each,
    until the off-diagonal Frobenius mass drops below ``tol`` (relative to
    ``max(1, ||m||_F)``).
    """
    a = np.array(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractError(f"need a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractError("matrix has non-finite entries")
    scale = max(1.0, float(np.linalg.norm(a)))
    if np.max(np.abs(a - a.T), initial=0.0) > SYMMETRY_TOL * scale:
        raise ContractError("matrix is not symmetric")
    a = 0.5 * (a + a.T)
    d = a.shape[0]
    threshold = tol * scale
    for _ in range(MAX_SWEEPS):
        if _off_norm(a) < threshold:
            return np.sort(np.diag(a))[::-1].copy()
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                # smaller root of t² + 2θt − 1 = 0; hypot avoids overflow for huge θ
                t = np.sign(theta) / (abs(theta) + np.hypot(theta, 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.hypot(t, 1.0)
                s = t * c
                rp, rq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                cp, cq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
    if _off_norm(a) < threshold:
        return np.sort(np.diag(a))[::-1].copy()
    raise ConvergenceError(f"Jacobi did not converge in {MAX_SWEEPS} sweeps")
