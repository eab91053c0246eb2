"""Cyclic Jacobi eigenvalue solver for real symmetric matrices."""
from __future__ import annotations

import numpy as np
from numba import njit

OFF_TOL = 1e-12
MAX_SWEEPS = 100


class EigensolverError(RuntimeError):
    pass


@njit(cache=True, nogil=True)
def _jacobi_sweeps(a, tol, max_sweeps):
    n = a.shape[0]
    for sweep in range(max_sweeps + 1):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                x = abs(a[p, q])
                if x > off:
                    off = x
        if off < tol:
            return sweep
        if sweep == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                tau = s / (1.0 + c)
                a[p, p] -= t * apq
                a[q, q] += t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                for r in range(n):
                    if r == p or r == q:
                        continue
                    g = a[r, p]
                    h = a[r, q]
                    a[r, p] = g - s * (h + g * tau)
                    a[r, q] = h + s * (g - h * tau)
                    a[p, r] = a[r, p]
                    a[q, r] = a[r, q]
    return -1


def jacobi_eigenvalues(m: np.ndarray, tol: float = OFF_TOL, max_sweeps: int = MAX_SWEEPS) -> np.ndarray:
    """Ascending eigenvalues of symmetric ``m``.

    Rotates until every off-diagonal magnitude is below ``tol``; raises
    :class:`EigensolverError` after ``max_sweeps`` sweeps.
    """
    a = np.array(m, dtype=np.float64, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"need a square matrix, got shape {a.shape}")
    if not np.array_equal(a, a.T):
        raise ValueError("matrix is not symmetric")
    if a.shape[0] == 0:
        return np.zeros(0)
    sweeps = _jacobi_sweeps(a, tol, max_sweeps)
    if sweeps < 0:
        off = np.max(np.abs(a - np.diag(np.diag(a))))
        raise EigensolverError(f"Jacobi did not converge after {max_sweeps} sweeps "
                               f"(largest off-diagonal {off:.3e})")
    return np.sort(np.diag(a))
