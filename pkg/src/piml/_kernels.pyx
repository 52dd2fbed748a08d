# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: cyclic Jacobi eigensolver and triangle enumeration."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

cnp.import_array()


def jacobi_eigh(a, double tol=1e-12, int max_sweeps=100):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] A = np.array(a, dtype=np.float64, order="C")
    cdef Py_ssize_t n = A.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] V = np.eye(n)
    cdef double[:, ::1] am = A
    cdef double[:, ::1] vm = V
    cdef Py_ssize_t p, q, k
    cdef int sweep
    cdef double apq, theta, t, c, s, g, h, off, total, scale
    total = 0.0
    for p in range(n):
        for q in range(n):
            total += am[p, q] * am[p, q]
    scale = tol * max(1.0, sqrt(total))
    for sweep in range(max_sweeps):
        total = 0.0
        for p in range(n):
            for q in range(p + 1, n):
                total += am[p, q] * am[p, q]
        off = sqrt(total * 2.0)
        if not off > scale:
            return np.diag(A).copy(), V
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = am[p, q]
                if apq == 0.0:
                    continue
                theta = (am[q, q] - am[p, p]) / (2.0 * apq)
                if fabs(theta) > 1e150:
                    t = 0.5 / fabs(theta)
                else:
                    t = 1.0 / (fabs(theta) + sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    g = am[k, p]
                    h = am[k, q]
                    am[k, p] = c * g - s * h
                    am[k, q] = s * g + c * h
                for k in range(n):
                    g = am[p, k]
                    h = am[q, k]
                    am[p, k] = c * g - s * h
                    am[q, k] = s * g + c * h
                am[p, q] = 0.0
                am[q, p] = 0.0
                for k in range(n):
                    g = vm[k, p]
                    h = vm[k, q]
                    vm[k, p] = c * g - s * h
                    vm[k, q] = s * g + c * h
    raise RuntimeError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")


def triangles(Py_ssize_t n, edges):
    cdef cnp.ndarray[cnp.int64_t, ndim=2] e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    cdef Py_ssize_t m = e.shape[0]
    # CSR of upper neighbours, each row sorted
    order = np.lexsort((e[:, 1], e[:, 0]))
    cdef cnp.ndarray[cnp.int64_t, ndim=1] cols = np.ascontiguousarray(e[order, 1])
    cdef cnp.ndarray[cnp.int64_t, ndim=1] ptr = np.zeros(n + 1, dtype=np.int64)
    cdef Py_ssize_t i, j, a, b, ea, eb
    for a in range(m):
        ptr[e[a, 0] + 1] += 1
    for i in range(n):
        ptr[i + 1] += ptr[i]
    out = []
    for i in range(n):
        for a in range(ptr[i], ptr[i + 1]):
            j = cols[a]
            # merge-intersect row i (after j) with row j
            ea = a + 1
            eb = ptr[j]
            while ea < ptr[i + 1] and eb < ptr[j + 1]:
                if cols[ea] == cols[eb]:
                    out.append((i, j, cols[ea]))
                    ea += 1
                    eb += 1
                elif cols[ea] < cols[eb]:
                    ea += 1
                else:
                    eb += 1
    return np.array(out, dtype=np.int64).reshape(-1, 3)
