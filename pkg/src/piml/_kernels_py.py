"""Pure-Python reference kernels (same algorithms as the compiled ``_kernels``)."""
from __future__ import annotations

import numpy as np


def jacobi_eigh(a, tol: float = 1e-12, max_sweeps: int = 100):
    """Cyclic Jacobi rotations on a symmetric matrix.

    Stops when the off-diagonal Frobenius norm is at most
    ``tol * max(1, ||A||_F)``.  Returns ``(eigenvalues, eigenvectors)`` unsorted.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    v = np.eye(n)
    scale = tol * max(1.0, float(np.sqrt(np.sum(a * a))))
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(a, 1) ** 2) * 2.0)
        if not off > scale:
            return np.diag(a).copy(), v
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / abs(theta)
                else:
                    t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                g = a[:, p].copy()
                h = a[:, q].copy()
                a[:, p] = c * g - s * h
                a[:, q] = s * g + c * h
                g = a[p, :].copy()
                h = a[q, :].copy()
                a[p, :] = c * g - s * h
                a[q, :] = s * g + c * h
                a[p, q] = 0.0
                a[q, p] = 0.0
                g = v[:, p].copy()
                h = v[:, q].copy()
                v[:, p] = c * g - s * h
                v[:, q] = s * g + c * h
    raise RuntimeError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")


def triangles(n: int, edges) -> np.ndarray:
    """All (i, j, k), i < j < k, with the three edges present; lexicographic order.

    ``edges`` holds canonical pairs (i < j).
    """
    upper = [set() for _ in range(n)]
    for i, j in np.asarray(edges, dtype=np.int64).reshape(-1, 2):
        upper[int(i)].add(int(j))
    out = []
    for i in range(n):
        for j in sorted(upper[i]):
            for k in sorted(upper[i] & upper[j]):
                out.append((i, j, k))
    return np.array(out, dtype=np.int64).reshape(-1, 3)
