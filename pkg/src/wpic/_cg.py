"""Numba kernels for the per-step hot path: a CSR matrix-vector product
and a Jacobi-preconditioned conjugate gradient.

Single-threaded and free of fastmath so runs are bit-reproducible.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from numba import njit


@njit(cache=True)
def csr_matvec(indptr, indices, data, x, out):
    n = indptr.shape[0] - 1
    for i in range(n):
        s = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            s += data[k] * x[indices[k]]
        out[i] = s


class FastCsr:
    """Thin CSR wrapper whose ``@`` goes through the numba kernel; the
    per-call overhead of the scipy wrapper dominates products this small.
    """

    def __init__(self, mat):
        m = sp.csr_matrix(mat).astype(np.float64)
        m.sort_indices()
        self.shape = m.shape
        self._indptr = m.indptr
        self._indices = m.indices
        self._data = m.data

    def __matmul__(self, x):
        out = np.empty(self.shape[0])
        csr_matvec(self._indptr, self._indices, self._data,
                   np.ascontiguousarray(x), out)
        return out


@njit(cache=True)
def cg_jacobi(indptr, indices, data, rhs, x, diag_inv, rel_tol, max_iter):
    """Solve ``A x = rhs`` in place, warm-started from the incoming ``x``.

    Terminates when ``||rhs - A x|| <= rel_tol * ||rhs||``.  Returns
    ``(iterations, residual_norm, converged)``.
    """
    n = rhs.shape[0]
    bnorm = 0.0
    for i in range(n):
        bnorm += rhs[i] * rhs[i]
    bnorm = np.sqrt(bnorm)
    target = rel_tol * bnorm

    r = np.empty(n)
    for i in range(n):
        s = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            s += data[k] * x[indices[k]]
        r[i] = rhs[i] - s

    rnorm2 = 0.0
    for i in range(n):
        rnorm2 += r[i] * r[i]
    if np.sqrt(rnorm2) <= target or bnorm == 0.0:
        return 0, np.sqrt(rnorm2), True

    z = np.empty(n)
    p = np.empty(n)
    for i in range(n):
        z[i] = diag_inv[i] * r[i]
        p[i] = z[i]
    rz = 0.0
    for i in range(n):
        rz += r[i] * z[i]

    ap = np.empty(n)
    for it in range(1, max_iter + 1):
        for i in range(n):
            s = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                s += data[k] * p[indices[k]]
            ap[i] = s
        pap = 0.0
        for i in range(n):
            pap += p[i] * ap[i]
        if pap <= 0.0:
            return it, np.sqrt(rnorm2), False
        alpha = rz / pap
        rnorm2 = 0.0
        for i in range(n):
            x[i] += alpha * p[i]
            r[i] -= alpha * ap[i]
            rnorm2 += r[i] * r[i]
        if np.sqrt(rnorm2) <= target:
            return it, np.sqrt(rnorm2), True
        rz_new = 0.0
        for i in range(n):
            z[i] = diag_inv[i] * r[i]
            rz_new += r[i] * z[i]
        beta = rz_new / rz
        rz = rz_new
        for i in range(n):
            p[i] = z[i] + beta * p[i]

    return max_iter, np.sqrt(rnorm2), False
